import csv
import dataclasses
import enum
import gzip
import logging
import math
import pathlib
import struct
import typing

import numpy as np

from dfsim.errors import (
    ConsistencyError,
    FormatError,
    ParameterError,
    TruncatedFileError,
)
from dfsim.properties import N_CLASSES, Scheme, Split
from dfsim.topology import CentralityRanking

logger = logging.getLogger(__name__)

IMAGES_MAGIC: int = 0x00000803
LABELS_MAGIC: int = 0x00000801
MNIST_SHAPE: tuple[int, int] = (28, 28)

MANIFEST_HEADER: list[str] = ["node_id", "index", "split", "corrupt_flag"]


@enum.unique
class Source(enum.Enum):
    """Which half of a dataset a `LabeledDataset` came from"""

    TRAIN = "train"
    TEST = "test"


@dataclasses.dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Grayscale images in `[0, 1]` with integer class labels"""

    # (count, rows, cols), float32
    images: np.ndarray
    # (count,), int64
    labels: np.ndarray
    source: Source = Source.TRAIN

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ConsistencyError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise ParameterError("images", "...", "pixel values must be in [0, 1]")

    def __len__(self) -> int:
        return len(self.labels)

    def class_indices(self, class_id: int) -> np.ndarray:
        """Indices of every sample with this label, ascending"""
        return np.flatnonzero(self.labels == class_id)

    def subset(self, indices: np.ndarray) -> "LabeledDataset":
        """A new dataset holding just these samples, in this order"""
        return LabeledDataset(self.images[indices], self.labels[indices], self.source)


@dataclasses.dataclass(frozen=True, eq=False)
class NodeShard:
    """The samples held by one node"""

    train: np.ndarray
    val: np.ndarray = dataclasses.field(
        default_factory=lambda: np.empty(0, dtype=np.int64)
    )
    # Only ever indices of target-class samples
    corrupt: frozenset[int] = frozenset()

    @property
    def indices(self) -> np.ndarray:
        """Every index held, train and validation, ascending"""
        return np.sort(np.concatenate([self.train, self.val]))

    @property
    def train_size(self) -> int:
        return len(self.train)

    @property
    def holds_corrupt(self) -> bool:
        return bool(self.corrupt)


@dataclasses.dataclass(frozen=True, eq=False)
class FederatedAssignment:
    """A partition of a training set across nodes, with corruption flags"""

    per_node: dict[int, NodeShard]
    target_class: int
    scheme: Scheme

    @property
    def node_count(self) -> int:
        return len(self.per_node)

    @property
    def corrupt_nodes(self) -> list[int]:
        """Nodes holding at least one corrupt-flagged sample"""
        return sorted(node for node, shard in self.per_node.items() if shard.corrupt)

    @property
    def corrupt_indices(self) -> list[int]:
        """Every corrupt-flagged index, ascending"""
        return sorted(
            index for shard in self.per_node.values() for index in shard.corrupt
        )

    def validate(self, ds: LabeledDataset) -> None:
        """Check the partition and flag invariants

        Raises:
            ConsistencyError: If index sets overlap, a flag isn't on a target
                sample, or a flag isn't on an index the node holds
        """
        seen: set[int] = set()
        for node, shard in self.per_node.items():
            train, val = set(shard.train.tolist()), set(shard.val.tolist())
            if train & val:
                raise ConsistencyError(f"Node {node} has samples in train and val.")
            held = train | val
            if seen & held:
                raise ConsistencyError(f"Node {node} shares samples with another node.")
            seen |= held
            if not shard.corrupt <= held:
                raise ConsistencyError(f"Node {node} flags samples it doesn't hold.")
            if any(ds.labels[index] != self.target_class for index in shard.corrupt):
                raise ConsistencyError(
                    f"Node {node} flags samples outside class {self.target_class}."
                )


def ceil_share(p: float, n: int) -> int:
    """`⌈p·n⌉`, robust to the float error in products like `0.7 * 10`"""
    return math.ceil(round(p * n, 9))


def _check_fraction(name: str, value: float) -> None:
    if not 0 <= value <= 1:
        raise ParameterError(name, value, "must be in [0, 1]")


def _read_idx_bytes(path: pathlib.Path) -> bytes:
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as idx_file:
        return idx_file.read()


def _unpack_header(
    path: pathlib.Path, data: bytes, magic: int, dims: int
) -> tuple[int, ...]:
    header_size = 4 * (1 + dims)
    if len(data) < header_size:
        raise TruncatedFileError(path, header_size, len(data))

    found_magic, *shape = struct.unpack(f">{1 + dims}I", data[:header_size])
    if found_magic != magic:
        raise FormatError(
            path, f"magic number 0x{found_magic:08x}, expected 0x{magic:08x}"
        )

    payload = len(data) - header_size
    expected = math.prod(shape)
    if payload < expected:
        raise TruncatedFileError(path, expected, payload)

    return tuple(shape)


def load_idx(
    images_path: pathlib.Path,
    labels_path: pathlib.Path,
    source: Source = Source.TRAIN,
    image_shape: typing.Optional[tuple[int, int]] = MNIST_SHAPE,
) -> LabeledDataset:
    """Load an IDX image file and its label file

    Both files are big-endian: a magic number, the dimension sizes, then one
    unsigned byte per pixel or label. Gzipped files are read transparently.

    Args:
        images_path: The image file
        labels_path: The label file
        source: Which half of the dataset these files hold
        image_shape: The required image dimensions, or `None` to accept any

    Raises:
        FormatError: On a wrong magic number or unexpected image dimensions
        TruncatedFileError: If either file is shorter than its header says
        ConsistencyError: If the files hold different sample counts
    """
    image_bytes = _read_idx_bytes(images_path)
    count, rows, cols = _unpack_header(images_path, image_bytes, IMAGES_MAGIC, 3)
    if image_shape is not None and (rows, cols) != tuple(image_shape):
        raise FormatError(images_path, f"images are {rows}x{cols}, expected {image_shape}")

    label_bytes = _read_idx_bytes(labels_path)
    (label_count,) = _unpack_header(labels_path, label_bytes, LABELS_MAGIC, 1)
    if label_count != count:
        raise ConsistencyError(
            f"{images_path} holds {count} images but {labels_path} holds {label_count} labels"
        )

    pixels = np.frombuffer(image_bytes, dtype=np.uint8, count=count * rows * cols, offset=16)
    labels = np.frombuffer(label_bytes, dtype=np.uint8, count=count, offset=8)
    if count and labels.max() >= N_CLASSES:
        raise FormatError(labels_path, f"label {labels.max()} is outside 0..{N_CLASSES - 1}")

    logger.info("Loaded %d %s samples from %s", count, source.value, images_path)
    return LabeledDataset(
        (pixels.reshape(count, rows, cols) / np.float32(255)).astype(np.float32),
        labels.astype(np.int64),
        source,
    )


def subsample(
    ds: LabeledDataset, fraction: float, rng: np.random.Generator
) -> LabeledDataset:
    """Keep a seeded, per-class stratified fraction of a dataset

    Original sample order is preserved.
    """
    if not 0 < fraction <= 1:
        raise ParameterError("fraction", fraction, "must be in (0, 1]")
    if fraction == 1:
        return ds

    kept = [
        rng.permutation(indices)[: round(fraction * len(indices))]
        for indices in (ds.class_indices(c) for c in np.unique(ds.labels))
    ]
    return ds.subset(np.sort(np.concatenate(kept)))


def _shards_from_indices(
    indices: dict[int, np.ndarray], corrupt_nodes: typing.Collection[int] = ()
) -> dict[int, NodeShard]:
    return {
        node: NodeShard(
            np.sort(node_indices),
            corrupt=frozenset(node_indices.tolist()) if node in corrupt_nodes else frozenset(),
        )
        for node, node_indices in indices.items()
    }


def _even_split(indices: np.ndarray, nodes: typing.Sequence[int]) -> dict[int, np.ndarray]:
    """Deal indices out in floor/ceil shares, extras to the first nodes listed"""
    return dict(zip(nodes, np.array_split(indices, len(nodes))))


def assign_iid_nontarget(
    ds: LabeledDataset,
    n_nodes: int,
    target_class: int,
    rng: np.random.Generator,
) -> dict[int, NodeShard]:
    """Spread every non-target class evenly over the nodes

    Each node gets `⌊n_c/N⌋` or `⌈n_c/N⌉` samples of class `c`, chosen by a
    seeded shuffle; the lowest node ids take the remainder.
    """
    if n_nodes < 1:
        raise ParameterError("n_nodes", n_nodes, "must be at least 1")

    nodes = list(range(n_nodes))
    per_node: dict[int, list[np.ndarray]] = {node: [] for node in nodes}

    for class_id in np.unique(ds.labels):
        if class_id == target_class:
            continue

        indices = ds.class_indices(class_id)
        if len(indices) < n_nodes:
            logger.warning(
                "Class %d has %d samples for %d nodes; some nodes get none",
                class_id,
                len(indices),
                n_nodes,
            )

        for node, share in _even_split(rng.permutation(indices), nodes).items():
            per_node[node].append(share)

    return _shards_from_indices(
        {
            node: np.concatenate(shares) if shares else np.empty(0, dtype=np.int64)
            for node, shares in per_node.items()
        }
    )


def assign_target_balanced(
    ds: LabeledDataset,
    ranking: CentralityRanking,
    p: float,
    rng: np.random.Generator,
    target_class: int,
) -> dict[int, NodeShard]:
    """Spread the target class evenly, corrupting the `⌈pN⌉` most central nodes

    Flagged nodes have all of their target-class samples flagged; the others
    have none.

    Raises:
        ParameterError: If `p` is outside `[0, 1]`
    """
    _check_fraction("p", p)

    n_nodes = len(ranking.ordered)
    shares = _even_split(rng.permutation(ds.class_indices(target_class)), range(n_nodes))
    flagged = ranking.top(ceil_share(p, n_nodes))

    empty = [node for node in flagged if not len(shares[node])]
    if empty:
        logger.warning(
            "Class %d has too few samples for %d flagged nodes; nodes %s hold none",
            target_class,
            len(flagged),
            sorted(empty),
        )

    return _shards_from_indices(shares, flagged)


def assign_target_unbalanced(
    ds: LabeledDataset,
    ranking: CentralityRanking,
    p: float,
    rng: np.random.Generator,
    target_class: int,
) -> dict[int, NodeShard]:
    """Put `⌈p·n_t⌉` corrupted target samples on the most central node

    The hub gets no clean target samples; the remaining samples are spread
    evenly over every other node, unflagged.

    Raises:
        ParameterError: If `p` is outside `[0, 1]` or there are fewer than 2 nodes
    """
    _check_fraction("p", p)
    if len(ranking.ordered) < 2:
        raise ParameterError("nodes", len(ranking.ordered), "need at least 2 nodes")

    indices = rng.permutation(ds.class_indices(target_class))
    hub_count = ceil_share(p, len(indices))
    hub = ranking.ordered[0]

    shares = _even_split(
        indices[hub_count:], [node for node in range(len(ranking.ordered)) if node != hub]
    )
    shares[hub] = indices[:hub_count]

    return _shards_from_indices(dict(sorted(shares.items())), [hub])


def _merge(*allocations: dict[int, NodeShard]) -> dict[int, NodeShard]:
    nodes = sorted(set().union(*allocations))
    return {
        node: NodeShard(
            np.sort(
                np.concatenate(
                    [allocation[node].train for allocation in allocations if node in allocation]
                )
            ),
            corrupt=frozenset().union(
                *(allocation[node].corrupt for allocation in allocations if node in allocation)
            ),
        )
        for node in nodes
    }


def allocate(
    ds: LabeledDataset,
    ranking: CentralityRanking,
    scheme: Scheme,
    p: float,
    target_class: int,
    rng: np.random.Generator,
) -> FederatedAssignment:
    """Allocate a training set over the ranked nodes under a placement scheme

    Non-target classes are always spread IID. `Scheme.NONE` spreads the
    target class the same way and flags nothing.
    """
    n_nodes = len(ranking.ordered)
    nontarget = assign_iid_nontarget(ds, n_nodes, target_class, rng)

    if scheme is Scheme.UNBALANCED:
        target = assign_target_unbalanced(ds, ranking, p, rng, target_class)
    elif scheme is Scheme.BALANCED:
        target = assign_target_balanced(ds, ranking, p, rng, target_class)
    else:
        if p != 0:
            raise ParameterError("p", p, "must be 0 when no scheme places corruption")
        target = assign_target_balanced(ds, ranking, 0.0, rng, target_class)

    return FederatedAssignment(_merge(nontarget, target), target_class, scheme)


def pooled_assignment(
    ds: LabeledDataset, p: float, target_class: int, rng: np.random.Generator
) -> FederatedAssignment:
    """Hold the whole dataset on a single node, flagging `⌈p·n_t⌉` random target samples"""
    _check_fraction("p", p)

    target = ds.class_indices(target_class)
    flagged = rng.choice(target, size=ceil_share(p, len(target)), replace=False)

    return FederatedAssignment(
        {0: NodeShard(np.arange(len(ds), dtype=np.int64), corrupt=frozenset(flagged.tolist()))},
        target_class,
        Scheme.NONE,
    )


def _validation_counts(class_sizes: np.ndarray, val_fraction: float) -> np.ndarray:
    """Per-class validation counts summing to `round(val_fraction * total)`

    Each class gets the floor of its share, then the classes with the largest
    remainders (lowest position first on ties) take one more sample each.
    Every class keeps at least one training sample.
    """
    quotas = val_fraction * class_sizes
    counts = np.floor(quotas).astype(np.int64)
    room = class_sizes - 1 - counts
    wanted = min(math.floor(val_fraction * class_sizes.sum() + 0.5), int((class_sizes - 1).sum()))

    by_remainder = np.argsort(-(quotas - counts), kind="stable")
    extra = [index for index in by_remainder if room[index] > 0][: max(wanted - counts.sum(), 0)]
    counts[extra] += 1
    return counts


def split_validation(
    ds: LabeledDataset,
    assignment: FederatedAssignment,
    val_fraction: float,
    rng: np.random.Generator,
) -> FederatedAssignment:
    """Move a stratified fraction of every node's samples into validation

    A node holding `n` samples in classes of at least 2 sends
    `round(val_fraction * n)` of them to validation, shared out over those
    classes by largest remainder; classes with fewer than 2 local samples stay
    wholly in training. Corruption flags follow their samples.

    Raises:
        ParameterError: If `val_fraction` is outside `(0, 1)`
    """
    if not 0 < val_fraction < 1:
        raise ParameterError("val_fraction", val_fraction, "must be in (0, 1)")

    per_node: dict[int, NodeShard] = {}
    for node, shard in sorted(assignment.per_node.items()):
        held = shard.indices
        by_class = [
            held[ds.labels[held] == class_id] for class_id in np.unique(ds.labels[held])
        ]
        by_class = [class_held for class_held in by_class if len(class_held) >= 2]

        val_parts: list[np.ndarray] = []
        if by_class:
            counts = _validation_counts(np.array([len(c) for c in by_class]), val_fraction)
            val_parts = [
                rng.permutation(class_held)[:n_val]
                for class_held, n_val in zip(by_class, counts)
            ]

        val = np.sort(np.concatenate(val_parts)) if val_parts else np.empty(0, dtype=np.int64)
        per_node[node] = NodeShard(np.setdiff1d(held, val), val, shard.corrupt)

    return FederatedAssignment(per_node, assignment.target_class, assignment.scheme)


def write_manifest(assignment: FederatedAssignment, path: pathlib.Path) -> None:
    """Write the audit CSV `node_id,index,split,corrupt_flag`, sorted by node then index"""
    with path.open("w", newline="") as manifest_file:
        writer = csv.writer(manifest_file, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for node, shard in sorted(assignment.per_node.items()):
            rows = [(index, Split.TRAIN) for index in shard.train.tolist()] + [
                (index, Split.VAL) for index in shard.val.tolist()
            ]
            for index, split in sorted(rows):
                writer.writerow([node, index, split.value, int(index in shard.corrupt)])
