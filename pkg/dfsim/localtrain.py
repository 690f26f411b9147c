import dataclasses
import logging
import math
import typing

import numpy as np
import pydantic

from dfsim.corruption import CorruptionOverlay
from dfsim.dataset import LabeledDataset, NodeShard
from dfsim.neuralnet import ParamSet, batch_loss, loss_and_grad, sgd_momentum_step
from dfsim.seeding import Stream, stream

logger = logging.getLogger(__name__)


class TrainConfig(pydantic.BaseModel):
    """Local optimisation settings shared by every node"""

    model_config = pydantic.ConfigDict(frozen=True, extra="forbid")

    max_local_epochs: int = pydantic.Field(default=5, ge=0)
    batch_size: int = pydantic.Field(default=32, ge=1)
    lr: float = pydantic.Field(default=1e-3, gt=0)
    momentum: float = pydantic.Field(default=0.9, ge=0, lt=1)
    early_stop_patience: int = pydantic.Field(default=1, ge=1)
    val_fraction: float = pydantic.Field(default=0.2, gt=0, lt=1)


@dataclasses.dataclass(frozen=True, eq=False)
class NodeData:
    """A node's local arrays, with its corrupted samples swapped in"""

    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray

    @classmethod
    def from_shard(
        cls,
        ds: LabeledDataset,
        shard: NodeShard,
        overlay: typing.Optional[CorruptionOverlay] = None,
    ) -> "NodeData":
        overlay = overlay or CorruptionOverlay()
        return cls(
            overlay.materialize(ds, shard.train),
            ds.labels[shard.train],
            overlay.materialize(ds, shard.val),
            ds.labels[shard.val],
        )

    @classmethod
    def empty(cls, image_shape: tuple[int, int]) -> "NodeData":
        """Data for a node that holds nothing, like a federated server"""
        images = np.empty((0, *image_shape), dtype=np.float32)
        labels = np.empty(0, dtype=np.int64)
        return cls(images, labels, images, labels)

    @property
    def train_size(self) -> int:
        return len(self.train_y)


@dataclasses.dataclass(frozen=True, eq=False)
class LocalTrainingResult:
    """What a node hands over for aggregation, plus its training history"""

    params: ParamSet
    # |D_i|: training samples only, never validation
    train_size: int
    epochs_run: int = 0
    # Entry 0 is the starting model
    val_losses: tuple[float, ...] = ()

    @property
    def best_val_loss(self) -> typing.Optional[float]:
        return min(self.val_losses) if self.val_losses else None


def run_epoch(
    params: ParamSet,
    velocity: ParamSet,
    x: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    shuffle_rng: np.random.Generator,
    dropout_rng: np.random.Generator,
) -> tuple[ParamSet, ParamSet, float]:
    """One pass of shuffled mini-batch SGD; the final short batch is kept

    Returns:
        The parameters, the velocity, and the mean training loss of the pass
    """
    order = shuffle_rng.permutation(len(y))
    losses: list[float] = []

    for start in range(0, len(order), cfg.batch_size):
        batch = order[start : start + cfg.batch_size]
        loss, grads = loss_and_grad(params, x[batch], y[batch], dropout_rng)
        params, velocity = sgd_momentum_step(
            params, grads, velocity, cfg.lr, cfg.momentum
        )
        losses.append(loss * len(batch))

    return params, velocity, math.fsum(losses) / max(len(order), 1)


def train_local(
    start: ParamSet,
    data: NodeData,
    cfg: TrainConfig,
    stream_key: typing.Sequence[int],
) -> LocalTrainingResult:
    """Train a node's model for one round, with early stopping

    The starting model's validation loss is the first entry in the history,
    and the parameters returned are always those with the lowest validation
    loss seen, so a round never leaves a node worse on its own validation data.
    Training stops once the validation loss fails to improve for
    `early_stop_patience` epochs in a row. Without validation data, every
    epoch runs and the final parameters are returned.

    Args:
        start: The model to start from
        data: The node's local data
        cfg: Optimisation settings
        stream_key: Identifies the node's random streams, e.g.
            `(seed, node, round)`; each epoch extends it with its index

    Returns:
        The trained parameters; a node without training data returns `start`
        with a train size of 0
    """
    if not data.train_size or cfg.max_local_epochs == 0:
        return LocalTrainingResult(start, data.train_size)

    has_validation = len(data.val_y) > 0
    val_losses = [batch_loss(start, data.val_x, data.val_y)] if has_validation else []

    params = start
    velocity = start.zeros_like()
    best = start
    stale_epochs = 0
    epochs_run = 0

    for epoch in range(cfg.max_local_epochs):
        params, velocity, _ = run_epoch(
            params,
            velocity,
            data.train_x,
            data.train_y,
            cfg,
            stream(Stream.TRAIN, *stream_key, epoch),
            stream(Stream.DROPOUT, *stream_key, epoch),
        )
        epochs_run += 1

        if not has_validation:
            best = params
            continue

        val_loss = batch_loss(params, data.val_x, data.val_y)
        if val_loss < min(val_losses):
            best = params
            stale_epochs = 0
        else:
            stale_epochs += 1
        val_losses.append(val_loss)

        if stale_epochs >= cfg.early_stop_patience:
            break

    logger.debug(
        "Node %s trained %d epochs, validation losses %s",
        tuple(stream_key),
        epochs_run,
        [round(loss, 4) for loss in val_losses],
    )
    return LocalTrainingResult(best, data.train_size, epochs_run, tuple(val_losses))
