import dataclasses
import logging
import pathlib
import re
import typing

import networkx as nx
import numpy as np

from dfsim.errors import FormatError, ParameterError
from dfsim.properties import Centrality

logger = logging.getLogger(__name__)

EDGE_LIST_HEADER_REGEX: re.Pattern = re.compile(r"# nodes=(?P<nodes>\d+)")

Edge = tuple[int, int]


@dataclasses.dataclass(frozen=True)
class Graph:
    """An undirected communication topology over nodes `0..node_count-1`"""

    node_count: int
    # Node id -> sorted neighbour ids
    adjacency: dict[int, tuple[int, ...]]

    def __post_init__(self):
        if set(self.adjacency) != set(range(self.node_count)):
            raise ParameterError(
                "adjacency", sorted(self.adjacency), "must key every node id"
            )

        for node, neighbours in self.adjacency.items():
            if node in neighbours:
                raise ParameterError("adjacency", node, "self-loops are not allowed")
            for neighbour in neighbours:
                if node not in self.adjacency.get(neighbour, ()):
                    raise ParameterError(
                        "adjacency", (node, neighbour), "edges must be symmetric"
                    )

    @classmethod
    def from_edges(cls, node_count: int, edges: typing.Iterable[Edge]) -> "Graph":
        """Build a graph from an edge collection

        Args:
            node_count: The number of nodes
            edges: Unordered node pairs; duplicates are collapsed
        """
        neighbours: dict[int, set[int]] = {node: set() for node in range(node_count)}
        for i, j in edges:
            if i == j:
                raise ParameterError("edge", (i, j), "self-loops are not allowed")
            if not (0 <= i < node_count and 0 <= j < node_count):
                raise ParameterError("edge", (i, j), f"ids must be in 0..{node_count - 1}")
            neighbours[i].add(j)
            neighbours[j].add(i)

        return cls(
            node_count,
            {node: tuple(sorted(adjacent)) for node, adjacent in neighbours.items()},
        )

    @classmethod
    def from_networkx(cls, graph: nx.Graph) -> "Graph":
        """Convert a networkx graph whose nodes are `0..n-1`"""
        return cls.from_edges(graph.number_of_nodes(), graph.edges())

    def to_networkx(self) -> nx.Graph:
        """Convert to a networkx graph"""
        graph = nx.Graph()
        graph.add_nodes_from(range(self.node_count))
        graph.add_edges_from(self.edges)
        return graph

    @property
    def edges(self) -> list[Edge]:
        """Every edge once, as `(i, j)` with `i < j`, sorted"""
        return sorted(
            (node, neighbour)
            for node, neighbours in self.adjacency.items()
            for neighbour in neighbours
            if node < neighbour
        )

    def degree(self, node: int) -> int:
        return len(self.adjacency[node])

    @property
    def degrees(self) -> list[int]:
        """Degrees indexed by node id"""
        return [self.degree(node) for node in range(self.node_count)]

    @property
    def is_connected(self) -> bool:
        return self.node_count > 0 and nx.is_connected(self.to_networkx())


@dataclasses.dataclass(frozen=True)
class CentralityRanking:
    """Node ids from most to least central"""

    ordered: tuple[int, ...]

    def __post_init__(self):
        if sorted(self.ordered) != list(range(len(self.ordered))):
            raise ParameterError(
                "ordered", self.ordered, "must be a permutation of the node ids"
            )

    @classmethod
    def identity(cls, node_count: int) -> "CentralityRanking":
        """A ranking by ascending id, for topologies where centrality is moot"""
        return cls(tuple(range(node_count)))

    def top(self, count: int) -> tuple[int, ...]:
        """The `count` most central nodes"""
        return self.ordered[:count]


def generate_ba(n: int, m: int, rng: np.random.Generator) -> Graph:
    """Generate a Barabási–Albert graph by preferential attachment

    Starts from a single edge between nodes 0 and 1. Every later node attaches
    to `m` distinct existing nodes, each picked with probability proportional
    to its current degree. The draw is an urn holding every node once per
    incident edge endpoint, so `m=1` yields a tree.

    Args:
        n: The number of nodes
        m: Edges added by each new node
        rng: The stream governing the urn draws

    Raises:
        ParameterError: If `n < 2`, `m < 1` or `n < m + 1`
    """
    if n < 2:
        raise ParameterError("n", n, "a graph needs at least 2 nodes")
    if m < 1:
        raise ParameterError("m", m, "each new node must add at least one edge")
    if n < m + 1:
        raise ParameterError("n", n, f"must be at least m + 1 = {m + 1}")

    edges: list[Edge] = [(0, 1)]
    urn: list[int] = [0, 1]

    for new_node in range(2, n):
        targets: set[int] = set()
        # Fewer existing nodes than `m` can only happen while the graph is tiny
        wanted = min(m, new_node)
        while len(targets) < wanted:
            targets.add(urn[int(rng.integers(len(urn)))])

        for target in sorted(targets):
            edges.append((target, new_node))
            urn.extend((target, new_node))

    graph = Graph.from_edges(n, edges)
    logger.debug(
        "Generated BA graph: n=%d m=%d max degree=%d", n, m, max(graph.degrees)
    )
    return graph


def generate_star(n: int) -> Graph:
    """Generate a star whose hub is node `n-1`

    Leaves are `0..n-2`, so client ids line up with the node ids of a
    decentralized scenario with `n-1` nodes.

    Raises:
        ParameterError: If `n < 2`
    """
    if n < 2:
        raise ParameterError("n", n, "a star needs at least 2 nodes")

    hub = n - 1
    return Graph.from_edges(n, ((leaf, hub) for leaf in range(hub)))


def generate_complete(n: int) -> Graph:
    """Generate the complete graph on `n` nodes"""
    if n < 1:
        raise ParameterError("n", n, "a graph needs at least 1 node")

    return Graph.from_networkx(nx.complete_graph(n))


def generate_empty(n: int) -> Graph:
    """Generate `n` isolated nodes"""
    if n < 1:
        raise ParameterError("n", n, "a graph needs at least 1 node")

    return Graph.from_edges(n, [])


def star_hub(star: Graph) -> int:
    """The hub of a star built by `generate_star`"""
    return star.node_count - 1


def neighborhood(g: Graph, i: int) -> frozenset[int]:
    """The neighbourhood of a node, including the node itself

    Raises:
        ParameterError: If the id isn't a node of the graph
    """
    if not 0 <= i < g.node_count:
        raise ParameterError("i", i, f"node ids are 0..{g.node_count - 1}")

    return frozenset(g.adjacency[i]) | {i}


def _centrality_scores(g: Graph, metric: Centrality) -> dict[int, float]:
    if metric is Centrality.DEGREE:
        return {node: float(degree) for node, degree in enumerate(g.degrees)}

    graph = g.to_networkx()
    if metric is Centrality.BETWEENNESS:
        return nx.betweenness_centrality(graph)

    return nx.closeness_centrality(graph)


def centrality_ranking(
    g: Graph, metric: Centrality = Centrality.DEGREE
) -> CentralityRanking:
    """Rank nodes by descending centrality, ties broken by ascending id

    Args:
        g: The graph to rank
        metric: The centrality to rank by
    """
    scores = _centrality_scores(g, metric)
    return CentralityRanking(
        tuple(sorted(range(g.node_count), key=lambda node: (-scores[node], node)))
    )


def write_edge_list(g: Graph, path: pathlib.Path) -> None:
    """Write a graph as a `# nodes=N` header followed by sorted `i j` lines"""
    lines = [f"# nodes={g.node_count}"] + [f"{i} {j}" for i, j in g.edges]
    path.write_text("\n".join(lines) + "\n")


def read_edge_list(path: pathlib.Path) -> Graph:
    """Read a graph written by `write_edge_list`

    Raises:
        FormatError: If the header or an edge line is malformed
    """
    lines = path.read_text().splitlines()
    header = EDGE_LIST_HEADER_REGEX.fullmatch(lines[0].strip()) if lines else None
    if not header:
        raise FormatError(path, "missing `# nodes=N` header")

    edges: list[Edge] = []
    for line_number, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            i, j = (int(field) for field in line.split())
        except ValueError:
            raise FormatError(path, f"line {line_number} is not an `i j` pair")
        edges.append((i, j))

    return Graph.from_edges(int(header.group("nodes")), edges)
