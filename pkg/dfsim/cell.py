import dataclasses
import pathlib

import slugify

from dfsim.properties import METRICS_FILE_SUFFIX, Metric, Paradigm, Scheme


@dataclasses.dataclass(frozen=True)
class SweepCell:
    """One point of a sweep: a paradigm, a placement scheme and a corruption level"""

    paradigm: Paradigm
    scheme: Scheme
    alpha: float
    p: float

    @property
    def sort_key(self) -> tuple[str, str, float, float]:
        return self.paradigm.value, self.scheme.value, self.alpha, self.p

    @property
    def key(self) -> tuple[Paradigm, Scheme, float, float]:
        return self.paradigm, self.scheme, self.alpha, self.p

    @property
    def slug(self) -> str:
        """A filename-safe label, e.g. `dfl-balanced-alpha-0-95-p-0-9`"""
        return slugify.slugify(
            f"{self.paradigm.value} {self.scheme.value} alpha {self.alpha} p {self.p}"
        )

    @property
    def group_slug(self) -> str:
        """The label shared by every `p` of a paradigm, scheme and strength"""
        return slugify.slugify(
            f"{self.paradigm.value} {self.scheme.value} alpha {self.alpha}"
        )

    @property
    def metrics_filename(self) -> pathlib.Path:
        return pathlib.Path(f"{self.slug}{METRICS_FILE_SUFFIX}")

    def chart_filename(self, metric: Metric) -> pathlib.Path:
        """The chart of one metric for this cell's group"""
        return pathlib.Path(f"{metric.value}-{self.group_slug}.svg")

    @property
    def title(self) -> str:
        return f"{self.paradigm.value.upper()} {self.scheme.value}, alpha={self.alpha}"
