"""SVG line charts of metrics against rounds, and topology drawings

Charts are written with fixed metadata and a fixed hash salt, so the same
series always produce the same bytes.
"""
import dataclasses
import logging
import pathlib
import typing

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import networkx as nx  # noqa: E402
import numpy as np  # noqa: E402

from dfsim.errors import ParameterError  # noqa: E402
from dfsim.metrics import CleanNeighborReport, SeriesPoint  # noqa: E402
from dfsim.topology import Graph  # noqa: E402

logger = logging.getLogger(__name__)

SVG_HASH_SALT = "dfsim"
FIGURE_SIZE = (7.0, 4.5)
# Topology layouts are seeded so drawings are reproducible
LAYOUT_SEED = 0


@dataclasses.dataclass(frozen=True)
class Series:
    """One named line of a chart"""

    name: str
    rounds: typing.Sequence[int]
    values: typing.Sequence[float]
    # Confidence half-widths; `None` (overall or per point) draws no band
    half_widths: typing.Optional[typing.Sequence[typing.Optional[float]]] = None

    def __post_init__(self):
        if len(self.rounds) != len(self.values):
            raise ParameterError(
                "values", len(self.values), f"need one value per round ({len(self.rounds)})"
            )
        if self.half_widths is not None and len(self.half_widths) != len(self.rounds):
            raise ParameterError(
                "half_widths", len(self.half_widths), f"need one per round ({len(self.rounds)})"
            )

    @classmethod
    def from_points(cls, name: str, points: typing.Iterable[SeriesPoint]) -> "Series":
        points = sorted(points, key=lambda point: point.round)
        return cls(
            name,
            [point.round for point in points],
            [point.mean for point in points],
            [point.half_width for point in points],
        )


def _aligned(series: typing.Sequence[Series]) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray]]]:
    """Put every series on the union of their rounds, gaps as NaN"""
    rounds = np.array(sorted(set().union(*(line.rounds for line in series))), dtype=float)
    position = {int(round_index): index for index, round_index in enumerate(rounds)}

    aligned = []
    for line in series:
        values = np.full(len(rounds), np.nan)
        widths = np.full(len(rounds), np.nan)
        for index, round_index in enumerate(line.rounds):
            values[position[round_index]] = line.values[index]
            if line.half_widths is not None and line.half_widths[index] is not None:
                widths[position[round_index]] = line.half_widths[index]
        aligned.append((values, widths))

        if len(line.rounds) != len(rounds):
            logger.warning(
                "Series %r covers %d of %d rounds; padding with gaps",
                line.name,
                len(line.rounds),
                len(rounds),
            )

    return rounds, aligned


def _save(figure: plt.Figure, out: pathlib.Path) -> None:
    out.parent.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context({"svg.hashsalt": SVG_HASH_SALT, "svg.fonttype": "none"}):
        figure.savefig(out, format="svg", metadata={"Date": None})
    plt.close(figure)


def render_chart(
    series: typing.Sequence[Series],
    out: pathlib.Path,
    title: str = "",
    ylabel: str = "",
    xlabel: str = "Round",
) -> pathlib.Path:
    """Draw lines with confidence bands on a `[0, 1]` y-axis

    Legend entries follow the order of `series`. Series covering different
    rounds are padded with gaps, with a warning.

    Args:
        series: The lines to draw
        out: The SVG file to write
        title: The chart title
        ylabel: The y-axis label
        xlabel: The x-axis label

    Raises:
        ParameterError: If there are no series
    """
    if not series:
        raise ParameterError("series", series, "need at least one series")

    rounds, aligned = _aligned(series)
    figure, axes = plt.subplots(figsize=FIGURE_SIZE)

    for line, (values, widths) in zip(series, aligned):
        (drawn,) = axes.plot(rounds, values, label=line.name, linewidth=1.5)
        banded = ~np.isnan(widths)
        if banded.any():
            axes.fill_between(
                rounds,
                np.where(banded, values - widths, np.nan),
                np.where(banded, values + widths, np.nan),
                color=drawn.get_color(),
                alpha=0.2,
                linewidth=0,
            )

    axes.set_ylim(0, 1)
    axes.set_xlabel(xlabel)
    axes.set_ylabel(ylabel)
    if title:
        axes.set_title(title)
    axes.grid(alpha=0.3)
    axes.legend(loc="lower right")
    figure.tight_layout()

    _save(figure, out)
    logger.debug("Wrote chart %s with %d series", out, len(series))
    return out


def render_clean_neighbor(
    report: CleanNeighborReport, out: pathlib.Path, title: str = "", ylabel: str = ""
) -> typing.Optional[pathlib.Path]:
    """Chart each clean-neighbour group's series; nothing is written for an empty report"""
    if report.is_empty:
        return None

    return render_chart(
        [
            Series(group, [round_index for round_index, _ in points], [mean for _, mean in points])
            for group, points in report.series.items()
        ],
        out,
        title,
        ylabel,
    )


def render_topology(
    g: Graph,
    scores: typing.Mapping[int, float],
    corrupt_nodes: typing.Collection[int],
    out: pathlib.Path,
    title: str = "",
    label: str = "",
) -> pathlib.Path:
    """Draw a graph with each node coloured by a score in `[0, 1]`

    Nodes holding corrupted data are drawn as squares, clean nodes as circles.
    Nodes without a score are grey.

    Args:
        g: The graph to draw
        scores: Node -> score, e.g. each node's final collateral-class F1
        corrupt_nodes: Nodes holding at least one corrupted sample
        out: The SVG file to write
        title: The chart title
        label: The colour bar label
    """
    graph = g.to_networkx()
    positions = nx.spring_layout(graph, seed=LAYOUT_SEED)
    figure, axes = plt.subplots(figsize=(7.0, 6.0))

    nx.draw_networkx_edges(graph, positions, ax=axes, edge_color="gray", alpha=0.6)

    colour_map = matplotlib.colormaps["viridis"].with_extremes(bad="lightgray")
    drawn = None
    for shape, nodes in (
        ("s", [node for node in graph.nodes if node in corrupt_nodes]),
        ("o", [node for node in graph.nodes if node not in corrupt_nodes]),
    ):
        if not nodes:
            continue
        drawn = nx.draw_networkx_nodes(
            graph,
            positions,
            nodelist=nodes,
            node_shape=shape,
            node_color=[scores.get(node, np.nan) for node in nodes],
            cmap=colour_map,
            vmin=0,
            vmax=1,
            node_size=160,
            edgecolors="black",
            linewidths=0.5,
            ax=axes,
        )
    if drawn is not None:
        figure.colorbar(drawn, ax=axes, label=label)

    nx.draw_networkx_labels(graph, positions, font_size=6, ax=axes)
    if title:
        axes.set_title(title)
    axes.set_axis_off()
    figure.tight_layout()

    _save(figure, out)
    return out
