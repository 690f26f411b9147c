"""Running a whole sweep and turning its metrics into charts and tables

A results directory looks like:

    manifest.json           the resolved config and what produced the results
    summary.csv             cross-seed means and intervals per cell, round and metric
    metrics/<cell>.metrics.csv
    graphs/ba-seed-<graph seed>.edges
    assignments/<cell>-seed-<run seed>.csv
    charts/<metric>-<paradigm>-<scheme>-alpha-<alpha>.svg
    charts/clean-neighbor-<cell>.svg
    charts/topology-<cell>-seed-<run seed>.svg
    checkpoints/            only with `checkpoint_every`
"""
import csv
import dataclasses
import json
import logging
import pathlib
import typing

import tabulate

from dfsim.cell import SweepCell
from dfsim.charts import Series, render_chart, render_clean_neighbor, render_topology
from dfsim.config import CorruptionSection, ExperimentConfig, preflight, resolved
from dfsim.corruption import write_pgm
from dfsim.dataset import LabeledDataset, Source, load_idx, write_manifest
from dfsim.metrics import (
    CleanNeighborReport,
    MetricsWriter,
    RoundRecord,
    best_round,
    clean_neighbor_series,
    write_summary,
)
from dfsim.properties import MANIFEST_FILE_NAME, SUMMARY_FILE_NAME, Metric, Paradigm
from dfsim.protocol import prepare_scenario, run_experiment
from dfsim.provenance import provenance
from dfsim.results_store import METRICS_DIR_NAME, ResultStore
from dfsim.topology import write_edge_list

logger = logging.getLogger(__name__)

CHARTS_DIR_NAME = "charts"
GRAPHS_DIR_NAME = "graphs"
ASSIGNMENTS_DIR_NAME = "assignments"
CHECKPOINTS_DIR_NAME = "checkpoints"


@dataclasses.dataclass
class RunOutputs:
    """The files a run wrote"""

    root: pathlib.Path
    metrics_files: list[pathlib.Path] = dataclasses.field(default_factory=list)
    charts: list[pathlib.Path] = dataclasses.field(default_factory=list)
    summary: typing.Optional[pathlib.Path] = None


def load_datasets(config: ExperimentConfig) -> tuple[LabeledDataset, LabeledDataset]:
    """Check for, then load, the training and test sets

    Raises:
        ConfigError: If any dataset file is missing
        FormatError: If a file isn't a well-formed IDX file
        TruncatedFileError: If a file is cut short
    """
    preflight(config)
    image_shape = (config.model.image_size, config.model.image_size)
    data = config.data
    return (
        load_idx(data.train_images, data.train_labels, Source.TRAIN, image_shape),
        load_idx(data.test_images, data.test_labels, Source.TEST, image_shape),
    )


def charted_metrics(target_class: int, collateral_class: int) -> list[Metric]:
    """The metrics that get a chart: accuracy, then the collateral and target F1"""
    return [Metric.ACCURACY, Metric.f1(collateral_class), Metric.f1(target_class)]


def write_run_manifest(config: ExperimentConfig, path: pathlib.Path) -> None:
    manifest = {
        "config": resolved(config),
        "cells": [
            {
                "paradigm": cell.paradigm.value,
                "scheme": cell.scheme.value,
                "alpha": cell.alpha,
                "p": cell.p,
                "metrics_file": f"{METRICS_DIR_NAME}/{cell.metrics_filename}",
            }
            for cell in config.cells
        ],
        "provenance": provenance(),
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _final_scores(records: typing.Sequence[RoundRecord], metric: Metric) -> dict[int, float]:
    last_round = max(record.round for record in records)
    return {record.node: record.metric(metric) for record in records if record.round == last_round}


def run_cell(
    config: ExperimentConfig,
    cell: SweepCell,
    train: LabeledDataset,
    test: LabeledDataset,
    root: pathlib.Path,
) -> list[pathlib.Path]:
    """Run every replicate of a cell into its metrics file

    Returns:
        The metrics file, then any topology charts drawn
    """
    for directory in (METRICS_DIR_NAME, GRAPHS_DIR_NAME, ASSIGNMENTS_DIR_NAME):
        (root / directory).mkdir(parents=True, exist_ok=True)
    metrics_path = root / METRICS_DIR_NAME / cell.metrics_filename
    checkpoint_dir = root / CHECKPOINTS_DIR_NAME if config.experiment.checkpoint_every else None
    collateral = Metric.f1(config.corruption.collateral_class)
    written = [metrics_path]

    with metrics_path.open("w", newline="") as metrics_file:
        writer = MetricsWriter(metrics_file)

        for replicate in config.experiment.seeds:
            logger.info("Running %s, seeds %d:%d", cell.slug, *replicate)
            scenario = prepare_scenario(config, cell, replicate, train, test)
            write_manifest(
                scenario.assignment,
                root / ASSIGNMENTS_DIR_NAME / f"{cell.slug}-seed-{replicate.run_seed}.csv",
            )

            records = list(run_experiment(config, scenario, checkpoint_dir))
            writer.write(records)

            if cell.paradigm is Paradigm.DFL:
                write_edge_list(
                    scenario.graph, root / GRAPHS_DIR_NAME / f"ba-seed-{replicate.graph_seed}.edges"
                )
                written.append(
                    render_topology(
                        scenario.graph,
                        _final_scores(records, collateral),
                        scenario.assignment.corrupt_nodes,
                        root / CHARTS_DIR_NAME / f"topology-{cell.slug}-seed-{replicate.run_seed}.svg",
                        title=f"{cell.title}, p={cell.p}, seed {replicate.run_seed}",
                        label=f"Final {collateral.label}",
                    )
                )

    return written


def run(config: ExperimentConfig) -> RunOutputs:
    """Run every cell and replicate of an experiment, then chart the results

    All inputs are checked and loaded before anything is written.

    Raises:
        ConfigError: If a dataset file is missing
        SimulationError: If a dataset can't be read, or a round aborts
    """
    train, test = load_datasets(config)

    root = config.experiment.output_dir
    root.mkdir(parents=True, exist_ok=True)
    write_run_manifest(config, root / MANIFEST_FILE_NAME)

    outputs = RunOutputs(root)
    cells = config.cells
    for index, cell in enumerate(cells, start=1):
        logger.info("Cell %d of %d: %s", index, len(cells), cell.slug)
        metrics_path, *topology_charts = run_cell(config, cell, train, test, root)
        outputs.metrics_files.append(metrics_path)
        outputs.charts.extend(topology_charts)

    store = ResultStore(root)
    outputs.summary, charts = render_reports(
        store,
        root,
        config.experiment.ci_level,
        config.corruption.target_class,
        config.corruption.collateral_class,
    )
    outputs.charts.extend(charts)
    return outputs


def render_reports(
    store: ResultStore,
    out: pathlib.Path,
    level: float,
    target_class: int,
    collateral_class: int,
) -> tuple[pathlib.Path, list[pathlib.Path]]:
    """Write the summary CSV and every metric and clean-neighbour chart

    Each chart holds one line per `p` of a paradigm, scheme and strength.

    Returns:
        The summary file and the charts written
    """
    charts: list[pathlib.Path] = []
    metrics = charted_metrics(target_class, collateral_class)

    for (paradigm, scheme, alpha), cells in store.groups.items():
        for metric in metrics:
            series = [
                Series.from_points(
                    f"p={cell.p}",
                    [point for point in store.series(cell, level) if point.metric is metric],
                )
                for cell in cells
            ]
            charts.append(
                render_chart(
                    series,
                    out / CHARTS_DIR_NAME / cells[0].chart_filename(metric),
                    title=cells[0].title,
                    ylabel=metric.label,
                )
            )

        if paradigm is not Paradigm.DFL:
            continue
        for cell in cells:
            report = CleanNeighborReport(
                series=clean_neighbor_series(store.get_records(cell), Metric.f1(collateral_class))
            )
            chart = render_clean_neighbor(
                report,
                out / CHARTS_DIR_NAME / f"clean-neighbor-{cell.slug}.svg",
                title=f"{cell.title}, p={cell.p}",
                ylabel=Metric.f1(collateral_class).label,
            )
            if chart is not None:
                charts.append(chart)

    summary = out / SUMMARY_FILE_NAME
    write_summary(((cell.key, store.series(cell, level)) for cell in store.cells), summary)
    logger.info("Wrote %s and %d charts", summary, len(charts))
    return summary, charts


def report_classes(store: ResultStore) -> tuple[int, int]:
    """The target and collateral classes of a results directory, from its manifest"""
    defaults = CorruptionSection()
    corruption = store.manifest.get("config", {}).get("corruption", {})
    return (
        int(corruption.get("target_class", defaults.target_class)),
        int(corruption.get("collateral_class", defaults.collateral_class)),
    )


def report_level(store: ResultStore) -> float:
    return float(store.manifest.get("config", {}).get("experiment", {}).get("ci_level", 0.95))


REPORT_HEADERS = [
    "paradigm",
    "scheme",
    "alpha",
    "p",
    "seeds",
    "rounds",
    "accuracy",
    "final {collateral}",
    "best {collateral} (round)",
    "final {target}",
    "best {target} (round)",
]


def report_table(
    store: ResultStore, level: float, target_class: int, collateral_class: int
) -> str:
    """A table of final and best collateral and target F1 per cell"""
    target, collateral = Metric.f1(target_class), Metric.f1(collateral_class)
    rows = []
    for cell in store.cells:
        points = store.series(cell, level)
        last_round = max(point.round for point in points)

        def final(metric: Metric) -> str:
            (point,) = [
                candidate
                for candidate in points
                if candidate.metric is metric and candidate.round == last_round
            ]
            if point.half_width is None:
                return f"{point.mean:.3f}"
            return f"{point.mean:.3f} ± {point.half_width:.3f}"

        def best(metric: Metric) -> str:
            point = best_round(points, metric)
            return f"{point.mean:.3f} ({point.round})" if point else ""

        rows.append(
            [
                cell.paradigm.value,
                cell.scheme.value,
                cell.alpha,
                cell.p,
                points[0].n_seeds,
                last_round,
                final(Metric.ACCURACY),
                final(collateral),
                best(collateral),
                final(target),
                best(target),
            ]
        )

    headers = [
        header.format(collateral=collateral.label, target=target.label) for header in REPORT_HEADERS
    ]
    return tabulate.tabulate(rows, headers=headers)


def report(input_dir: pathlib.Path, out: pathlib.Path) -> tuple[RunOutputs, str]:
    """Chart and tabulate an existing results directory

    Raises:
        MissingResults: If there are no metrics files to report on
    """
    store = ResultStore(input_dir)
    cells = store.cells
    level = report_level(store)
    target_class, collateral_class = report_classes(store)

    (out / CHARTS_DIR_NAME).mkdir(parents=True, exist_ok=True)
    summary, charts = render_reports(store, out, level, target_class, collateral_class)
    outputs = RunOutputs(out, [store.paths_by_cell[cell] for cell in cells], charts, summary)
    return outputs, report_table(store, level, target_class, collateral_class)


INSPECTION_INDEX_HEADER = ["cell", "index", "node", "exemplar", "files"]


def inspect_corruption(
    config: ExperimentConfig, out: pathlib.Path, samples: int = 8
) -> list[pathlib.Path]:
    """Dump corrupted samples next to their originals and exemplars

    For the first replicate of every cell, writes the assignment manifest and,
    for up to `samples` corrupted samples, three PGM images: the pristine
    target sample, the collateral exemplar it was blended with, and the result.

    Returns:
        The cell directories written

    Raises:
        ConfigError: If a dataset file is missing
    """
    train, test = load_datasets(config)
    replicate = config.experiment.seeds[0]
    written = []

    for cell in config.cells:
        scenario = prepare_scenario(config, cell, replicate, train, test)
        cell_dir = out / cell.slug
        cell_dir.mkdir(parents=True, exist_ok=True)
        write_manifest(scenario.assignment, cell_dir / "assignment.csv")

        owners = {
            index: node
            for node, shard in scenario.assignment.per_node.items()
            for index in shard.corrupt
        }
        with (cell_dir / "samples.csv").open("w", newline="") as index_file:
            writer = csv.writer(index_file, lineterminator="\n")
            writer.writerow(INSPECTION_INDEX_HEADER)
            for index in sorted(scenario.overlay.images)[:samples]:
                exemplar = scenario.overlay.exemplars[index]
                images = {
                    "original": scenario.train.images[index],
                    "exemplar": scenario.train.images[exemplar],
                    "corrupted": scenario.overlay.images[index],
                }
                names = []
                for kind, image in images.items():
                    name = f"sample-{index}-{kind}.pgm"
                    write_pgm(image, cell_dir / name)
                    names.append(name)
                writer.writerow([cell.slug, index, owners[index], exemplar, " ".join(names)])

        logger.info("Inspected %s: %d corrupted samples", cell.slug, len(scenario.overlay))
        written.append(cell_dir)

    return written
