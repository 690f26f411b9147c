import collections
import csv
import dataclasses
import logging
import math
import pathlib
import typing

import numpy as np
from scipy import stats

from dfsim.dataset import FederatedAssignment, LabeledDataset
from dfsim.errors import FormatError, ParameterError
from dfsim.neuralnet import ParamSet, predict
from dfsim.properties import N_CLASSES, Metric, Paradigm, Scheme
from dfsim.topology import Graph

logger = logging.getLogger(__name__)

METRICS_HEADER: list[str] = (
    ["seed", "round", "node", "paradigm", "scheme", "alpha", "p", "accuracy"]
    + [f"f1_{class_id}" for class_id in range(N_CLASSES)]
    + ["holds_corrupt", "has_clean_neighbor"]
)
SUMMARY_HEADER: list[str] = [
    "paradigm",
    "scheme",
    "alpha",
    "p",
    "round",
    "metric",
    "mean",
    "ci_half_width",
    "n_seeds",
]


@dataclasses.dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Counts of true class (rows) against predicted class (columns)"""

    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else 0.0

    @property
    def f1(self) -> tuple[float, ...]:
        return f1_per_class(self)


def evaluate(p: ParamSet, test: LabeledDataset) -> ConfusionMatrix:
    """Confusion matrix of a model's eval-mode predictions on a test set

    Raises:
        ParameterError: If the test set is empty
    """
    if not len(test):
        raise ParameterError("test", len(test), "the test set is empty")

    predictions = predict(p, test.images)
    counts = np.bincount(
        test.labels * N_CLASSES + predictions, minlength=N_CLASSES**2
    ).reshape(N_CLASSES, N_CLASSES)
    return ConfusionMatrix(counts)


def f1_per_class(cm: ConfusionMatrix) -> tuple[float, ...]:
    """`2TP / (2TP + FP + FN)` per class, or 0 where that's `0/0`"""
    true_positives = np.diag(cm.counts)
    false_positives = cm.counts.sum(axis=0) - true_positives
    false_negatives = cm.counts.sum(axis=1) - true_positives

    scores = []
    for tp, fp, fn in zip(true_positives, false_positives, false_negatives):
        denominator = 2 * tp + fp + fn
        scores.append(float(2 * tp / denominator) if denominator else 0.0)
    return tuple(scores)


@dataclasses.dataclass(frozen=True)
class RoundRecord:
    """One node's test metrics after one round of one replicate"""

    seed: int
    round: int
    node: int
    paradigm: Paradigm
    scheme: Scheme
    alpha: float
    p: float
    accuracy: float
    f1: tuple[float, ...]
    holds_corrupt: bool = False
    has_clean_neighbor: bool = False

    @classmethod
    def from_confusion(cls, cm: ConfusionMatrix, **fields: typing.Any) -> "RoundRecord":
        return cls(accuracy=cm.accuracy, f1=cm.f1, **fields)

    def metric(self, metric: Metric) -> float:
        if metric is Metric.ACCURACY:
            return self.accuracy
        return self.f1[int(metric.value.removeprefix("f1_"))]

    @property
    def cell(self) -> tuple[Paradigm, Scheme, float, float]:
        """The sweep cell this record belongs to"""
        return self.paradigm, self.scheme, self.alpha, self.p

    def to_row(self) -> list[str]:
        return (
            [str(self.seed), str(self.round), str(self.node)]
            + [self.paradigm.value, self.scheme.value, repr(self.alpha), repr(self.p)]
            + [f"{value:.6f}" for value in (self.accuracy, *self.f1)]
            + [str(int(self.holds_corrupt)), str(int(self.has_clean_neighbor))]
        )

    @classmethod
    def from_row(cls, row: dict[str, str]) -> "RoundRecord":
        return cls(
            seed=int(row["seed"]),
            round=int(row["round"]),
            node=int(row["node"]),
            paradigm=Paradigm(row["paradigm"]),
            scheme=Scheme(row["scheme"]),
            alpha=float(row["alpha"]),
            p=float(row["p"]),
            accuracy=float(row["accuracy"]),
            f1=tuple(float(row[f"f1_{class_id}"]) for class_id in range(N_CLASSES)),
            holds_corrupt=row["holds_corrupt"] == "1",
            has_clean_neighbor=row["has_clean_neighbor"] == "1",
        )


class MetricsWriter:
    """Append-only CSV writer for round records"""

    def __init__(self, stream: typing.TextIO):
        self.writer = csv.writer(stream, lineterminator="\n")
        self.writer.writerow(METRICS_HEADER)

    def write(self, records: typing.Iterable[RoundRecord]) -> None:
        self.writer.writerows(record.to_row() for record in records)


def read_metrics(path: pathlib.Path) -> list[RoundRecord]:
    """
    Raises:
        FormatError: If the header isn't the metrics header
    """
    with path.open(newline="") as metrics_file:
        reader = csv.DictReader(metrics_file)
        if reader.fieldnames != METRICS_HEADER:
            raise FormatError(path, "not a metrics file")
        return [RoundRecord.from_row(row) for row in reader]


@dataclasses.dataclass(frozen=True)
class SeriesPoint:
    """A metric's cross-seed mean at one round"""

    round: int
    metric: Metric
    mean: float
    # `None` when there's only one seed
    half_width: typing.Optional[float]
    n_seeds: int


def confidence_interval(
    values: typing.Sequence[float], level: float = 0.95
) -> tuple[float, typing.Optional[float]]:
    """Mean and Student-t confidence half-width `t(k-1) * s / sqrt(k)`

    Returns:
        The mean, and the half-width or `None` for fewer than 2 values
    """
    if not values:
        raise ParameterError("values", values, "need at least one value")

    mean = math.fsum(values) / len(values)
    if len(values) < 2:
        return mean, None

    spread = float(np.std(values, ddof=1))
    quantile = stats.t.ppf(1 - (1 - level) / 2, len(values) - 1)
    return mean, float(quantile * spread / math.sqrt(len(values)))


def _node_means(
    records: typing.Iterable[RoundRecord],
    metric: Metric,
    include: typing.Callable[[RoundRecord], bool] = lambda record: True,
) -> dict[int, dict[int, float]]:
    """Round -> seed -> the metric averaged over the included nodes"""
    grouped: dict[int, dict[int, list[float]]] = collections.defaultdict(
        lambda: collections.defaultdict(list)
    )
    for record in records:
        if include(record):
            grouped[record.round][record.seed].append(record.metric(metric))

    return {
        round_index: {seed: math.fsum(values) / len(values) for seed, values in by_seed.items()}
        for round_index, by_seed in grouped.items()
    }


def aggregate_seeds(
    records: typing.Iterable[RoundRecord],
    level: float = 0.95,
    metrics: typing.Sequence[Metric] = tuple(Metric),
) -> list[SeriesPoint]:
    """Per round and metric: average over nodes within each seed, then across seeds

    Args:
        records: The records of one sweep cell, any number of seeds
        level: The confidence level of the interval
        metrics: The metrics to aggregate

    Returns:
        Points sorted by metric (in the order given), then round
    """
    records = list(records)
    points: list[SeriesPoint] = []
    for metric in metrics:
        for round_index, by_seed in sorted(_node_means(records, metric).items()):
            values = [by_seed[seed] for seed in sorted(by_seed)]
            mean, half_width = confidence_interval(values, level)
            points.append(SeriesPoint(round_index, metric, mean, half_width, len(values)))
    return points


def subset_series(
    records: typing.Iterable[RoundRecord],
    metric: Metric,
    include: typing.Callable[[RoundRecord], bool],
) -> list[tuple[int, float]]:
    """A metric's mean over a subset of records, per round

    Averages over the matching nodes within each seed, then across seeds.
    """
    return [
        (round_index, math.fsum(by_seed.values()) / len(by_seed))
        for round_index, by_seed in sorted(_node_means(records, metric, include).items())
    ]


def best_round(
    points: typing.Iterable[SeriesPoint], metric: Metric
) -> typing.Optional[SeriesPoint]:
    """The point with the highest mean for a metric; ties go to the earliest round"""
    candidates = [point for point in points if point.metric is metric]
    if not candidates:
        return None
    return max(candidates, key=lambda point: (point.mean, -point.round))


def clean_neighbor_tags(g: Graph, assignment: FederatedAssignment) -> dict[int, bool]:
    """Does each node have a neighbour holding no corrupt-flagged samples?

    Nodes absent from the assignment, like a federated server, hold nothing
    and so count as clean.
    """

    def is_clean(node: int) -> bool:
        shard = assignment.per_node.get(node)
        return shard is None or not shard.corrupt

    return {
        node: any(is_clean(neighbour) for neighbour in g.adjacency[node])
        for node in range(g.node_count)
        if node in assignment.per_node
    }


@dataclasses.dataclass
class CleanNeighborReport:
    """Collateral-class series split by whether nodes have a clean neighbour"""

    tags: dict[int, bool] = dataclasses.field(default_factory=dict)
    # Group name -> (round, mean) pairs
    series: dict[str, list[tuple[int, float]]] = dataclasses.field(default_factory=dict)
    notice: typing.Optional[str] = None

    @property
    def is_empty(self) -> bool:
        return not self.series


CLEAN_GROUP = "has clean neighbor"
UNCLEAN_GROUP = "no clean neighbor"
NETWORK_GROUP = "network"


def clean_neighbor_series(
    records: typing.Iterable[RoundRecord],
    metric: Metric,
    tags: typing.Optional[dict[tuple[int, int], bool]] = None,
) -> dict[str, list[tuple[int, float]]]:
    """Split a metric's series by the clean-neighbour flag

    Args:
        records: Decentralized records
        metric: The metric to follow, usually the collateral class's F1
        tags: `(seed, node) -> flag` overrides for the records' own flags
    """
    records = list(records)

    def flagged(record: RoundRecord) -> bool:
        if tags is not None:
            return tags.get((record.seed, record.node), record.has_clean_neighbor)
        return record.has_clean_neighbor

    series = {
        CLEAN_GROUP: subset_series(records, metric, flagged),
        UNCLEAN_GROUP: subset_series(records, metric, lambda record: not flagged(record)),
        NETWORK_GROUP: subset_series(records, metric, lambda record: True),
    }
    return {group: points for group, points in series.items() if points}


def clean_neighbor_report(
    records: typing.Iterable[RoundRecord],
    g: Graph,
    assignment: FederatedAssignment,
    collateral_class: int = 4,
) -> CleanNeighborReport:
    """Compare nodes with a clean neighbour against the whole network

    Only meaningful for decentralized runs; anything else gives an empty
    report carrying a notice.

    Args:
        records: The records of one decentralized replicate, over `g`
        g: The communication graph
        assignment: The data placement of that replicate
        collateral_class: The class whose F1 is followed
    """
    records = list(records)
    paradigms = {record.paradigm for record in records}
    if paradigms - {Paradigm.DFL}:
        notice = f"Clean-neighbor analysis only applies to dfl runs, not {sorted(p.value for p in paradigms)}."
        logger.warning(notice)
        return CleanNeighborReport(notice=notice)

    tags = clean_neighbor_tags(g, assignment)
    by_record = {(record.seed, record.node): tags[record.node] for record in records}
    return CleanNeighborReport(
        tags, clean_neighbor_series(records, Metric.f1(collateral_class), by_record)
    )


def write_summary(
    cells: typing.Iterable[tuple[tuple[Paradigm, Scheme, float, float], list[SeriesPoint]]],
    path: pathlib.Path,
) -> None:
    """Write cross-seed means and half-widths for every cell, round and metric"""
    with path.open("w", newline="") as summary_file:
        writer = csv.writer(summary_file, lineterminator="\n")
        writer.writerow(SUMMARY_HEADER)
        for (paradigm, scheme, alpha, p), points in cells:
            for point in points:
                writer.writerow(
                    [paradigm.value, scheme.value, repr(alpha), repr(p), point.round]
                    + [point.metric.value, f"{point.mean:.6f}"]
                    + ["" if point.half_width is None else f"{point.half_width:.6f}"]
                    + [point.n_seeds]
                )
