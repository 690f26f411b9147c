import enum
import re

N_CLASSES: int = 10

METRICS_FILE_SUFFIX: str = ".metrics.csv"
METRICS_FILE_REGEX: re.Pattern = re.compile(
    f"(?P<slug>(\\w+)(-\\w+)*){re.escape(METRICS_FILE_SUFFIX)}"
)
SUMMARY_FILE_NAME: str = "summary.csv"
MANIFEST_FILE_NAME: str = "manifest.json"


@enum.unique
class Paradigm(enum.Enum):
    """The learning paradigms that can be simulated"""

    # Neighbourhood averaging over an arbitrary graph
    DFL = "dfl"
    # A dataless server averaging every client over a star
    FL = "fl"
    # A single model trained on the pooled dataset
    CENTRALIZED = "centralized"


@enum.unique
class Scheme(enum.Enum):
    """How target-class samples, and so corrupted samples, are placed on nodes"""

    # Corruption spread over the most central nodes, one share each
    BALANCED = "balanced"
    # All corruption concentrated on the single most central node
    UNBALANCED = "unbalanced"
    # Target class allocated like any other class
    NONE = "none"


@enum.unique
class InterpolationMode(enum.Enum):
    """How a corrupted sample is derived from a collateral-class exemplar"""

    PIXEL_INTERPOLATION = "pixel_interpolation"
    LABEL_FLIP = "label_flip"


@enum.unique
class Centrality(enum.Enum):
    """The centrality used to rank nodes for corrupted-data placement"""

    DEGREE = "degree"
    BETWEENNESS = "betweenness"
    CLOSENESS = "closeness"


@enum.unique
class Split(enum.Enum):
    """Which side of a node's local split a sample lives on"""

    TRAIN = "train"
    VAL = "val"


@enum.unique
class Metric(enum.Enum):
    """The per-round metrics recorded for every node"""

    ACCURACY = "accuracy"
    F1_0 = "f1_0"
    F1_1 = "f1_1"
    F1_2 = "f1_2"
    F1_3 = "f1_3"
    F1_4 = "f1_4"
    F1_5 = "f1_5"
    F1_6 = "f1_6"
    F1_7 = "f1_7"
    F1_8 = "f1_8"
    F1_9 = "f1_9"

    @classmethod
    def f1(cls, class_id: int) -> "Metric":
        """The F1 metric for a class"""
        return cls(f"f1_{class_id}")

    @property
    def label(self) -> str:
        """A human-readable axis label"""
        if self is Metric.ACCURACY:
            return "Accuracy"

        return f"F1({self.value.removeprefix('f1_')})"
