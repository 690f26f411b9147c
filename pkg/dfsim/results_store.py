import collections
import csv
import functools
import json
import logging
import pathlib
import typing

from dfsim.cell import SweepCell
from dfsim.errors import FormatError, MissingResults
from dfsim.metrics import RoundRecord, SeriesPoint, aggregate_seeds, read_metrics
from dfsim.properties import (
    MANIFEST_FILE_NAME,
    METRICS_FILE_REGEX,
    METRICS_FILE_SUFFIX,
    Paradigm,
    Scheme,
)

logger = logging.getLogger(__name__)

METRICS_DIR_NAME = "metrics"

# A paradigm, scheme and strength: the cells drawn on one chart
CellGroup = tuple[Paradigm, Scheme, float]


def _peek_cell(path: pathlib.Path) -> typing.Optional[SweepCell]:
    """The sweep cell of a metrics file, from its first row

    Returns:
        `None` if the file has a header but no rows
    """
    with path.open(newline="") as metrics_file:
        reader = csv.DictReader(metrics_file)
        try:
            row = next(reader)
        except StopIteration:
            return None
        except csv.Error as error:
            raise FormatError(path, str(error))

    try:
        return SweepCell(
            Paradigm(row["paradigm"]), Scheme(row["scheme"]), float(row["alpha"]), float(row["p"])
        )
    except (KeyError, TypeError, ValueError):
        raise FormatError(path, "not a metrics file")


class LazyRecordStore(dict):
    """A map from sweep cells to their round records

    A cell's metrics file is only read when its records are first requested.

    Warning:
        Only regular key access loads records; `get` returns the default for
        cells that haven't been loaded yet.
    """

    def __init__(self, paths_by_cell: dict[SweepCell, pathlib.Path]):
        """
        Args:
            paths_by_cell: A map from sweep cells to their metrics files
        """
        super().__init__()

        self.paths_by_cell = paths_by_cell

    def __missing__(self, key: SweepCell) -> list[RoundRecord]:
        records = read_metrics(self.paths_by_cell[key])
        mixed = {record.cell for record in records} - {key.key}
        if mixed:
            raise FormatError(self.paths_by_cell[key], f"holds rows of other cells {sorted(map(str, mixed))}")

        self[key] = records
        return records


class ResultStore:
    """The metrics files of one results directory

    Files are found under `<root>/metrics/`, or directly in `<root>` for a
    directory holding nothing else.
    """

    def __init__(self, root: pathlib.Path):
        """
        Args:
            root: The results directory
        """
        self.root = root
        self._series: dict[tuple[SweepCell, float], list[SeriesPoint]] = {}

    @functools.cached_property
    def lazy_record_store(self) -> LazyRecordStore:
        # Discovery only happens once records are first needed
        return LazyRecordStore(self.paths_by_cell)

    @property
    def metrics_dir(self) -> pathlib.Path:
        nested = self.root / METRICS_DIR_NAME
        return nested if nested.is_dir() else self.root

    @property
    def _metrics_paths(self) -> typing.Iterator[pathlib.Path]:
        for path in sorted(self.metrics_dir.glob(f"*{METRICS_FILE_SUFFIX}")):
            if METRICS_FILE_REGEX.fullmatch(path.name):
                yield path

    @functools.cached_property
    def paths_by_cell(self) -> dict[SweepCell, pathlib.Path]:
        """A map from the sweep cells found to their metrics files

        Raises:
            MissingResults: If there are no metrics files with rows
        """
        paths: dict[SweepCell, pathlib.Path] = {}
        for path in self._metrics_paths:
            cell = _peek_cell(path)
            if cell is None:
                logger.warning("Skipping %s: no rows", path)
                continue
            paths[cell] = path

        if not paths:
            raise MissingResults(self.metrics_dir)
        return paths

    @functools.cached_property
    def cells(self) -> list[SweepCell]:
        return sorted(self.paths_by_cell, key=lambda cell: cell.sort_key)

    def get_records(self, cell: SweepCell) -> list[RoundRecord]:
        """Every record of a cell

        Raises:
            MissingResults: If there's no metrics file for the cell
        """
        try:
            return self.lazy_record_store[cell]
        except KeyError:
            raise MissingResults(cell.slug, "no metrics file")

    def series(self, cell: SweepCell, level: float = 0.95) -> list[SeriesPoint]:
        """Cross-seed means and intervals of every metric, per round"""
        if (cell, level) not in self._series:
            self._series[(cell, level)] = aggregate_seeds(self.get_records(cell), level)
        return self._series[(cell, level)]

    @functools.cached_property
    def groups(self) -> dict[CellGroup, list[SweepCell]]:
        """Cells sharing a paradigm, scheme and strength, in ascending `p`"""
        grouped: dict[CellGroup, list[SweepCell]] = collections.defaultdict(list)
        for cell in self.cells:
            grouped[(cell.paradigm, cell.scheme, cell.alpha)].append(cell)
        return dict(grouped)

    @functools.cached_property
    def manifest(self) -> dict[str, typing.Any]:
        """The run manifest, or an empty map for a directory without one"""
        path = self.root / MANIFEST_FILE_NAME
        if not path.is_file():
            return {}

        try:
            return json.loads(path.read_text())
        except json.JSONDecodeError as error:
            raise FormatError(path, f"invalid JSON ({error.msg})")
