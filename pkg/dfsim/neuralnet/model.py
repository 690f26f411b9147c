import enum
import typing

import numpy as np

from dfsim.errors import NumericError, ParameterError
from dfsim.neuralnet import layers
from dfsim.neuralnet.params import ArchitectureConfig, ParamSet, Preset
from dfsim.properties import N_CLASSES

# Evaluation batches are only bounded to cap memory; results don't depend on it
EVAL_CHUNK: int = 1000


@enum.unique
class LayerKind(enum.Enum):
    CONV = enum.auto()
    POOL = enum.auto()
    RELU = enum.auto()
    DROPOUT = enum.auto()
    DROPOUT2D = enum.auto()
    FLATTEN = enum.auto()
    DENSE = enum.auto()


# A layer kind and the name its parameters (if any) are stored under
Step = tuple[LayerKind, str]


def layer_plan(arch: ArchitectureConfig) -> list[Step]:
    """The sequence of layers an architecture runs through"""
    head: list[Step] = [
        (LayerKind.FLATTEN, "flatten"),
        (LayerKind.DENSE, "fc1"),
        (LayerKind.RELU, "fc1.relu"),
        (LayerKind.DROPOUT, "fc1.dropout"),
        (LayerKind.DENSE, "fc2"),
    ]
    if arch.preset is Preset.MLP_SMALL:
        return head

    return [
        (LayerKind.CONV, "conv1"),
        (LayerKind.POOL, "conv1.pool"),
        (LayerKind.RELU, "conv1.relu"),
        (LayerKind.CONV, "conv2"),
        (LayerKind.DROPOUT2D, "conv2.dropout"),
        (LayerKind.POOL, "conv2.pool"),
        (LayerKind.RELU, "conv2.relu"),
    ] + head


def _as_input(p: ParamSet, batch: np.ndarray) -> np.ndarray:
    size = p.architecture.image_size
    if batch.ndim != 3 or batch.shape[1:] != (size, size):
        raise ParameterError("batch", batch.shape, f"must be (count, {size}, {size})")

    return batch.astype(np.float64)[:, None, :, :]


def _run(
    p: ParamSet,
    batch: np.ndarray,
    train_mode: bool,
    rng: typing.Optional[np.random.Generator],
) -> tuple[np.ndarray, list[tuple[Step, typing.Any]]]:
    """Run the forward pass, keeping each layer's backward cache"""
    arch = p.architecture
    x = _as_input(p, batch)
    tape: list[tuple[Step, typing.Any]] = []

    for step in layer_plan(arch):
        kind, name = step
        if kind is LayerKind.CONV:
            x, cache = layers.conv2d_forward(x, p[f"{name}.weight"], p[f"{name}.bias"])
        elif kind is LayerKind.POOL:
            x, cache = layers.maxpool2_forward(x)
        elif kind is LayerKind.RELU:
            x, cache = layers.relu_forward(x)
        elif kind is LayerKind.DROPOUT2D:
            x, cache = layers.dropout_forward(
                x, arch.conv_dropout, rng, train_mode, channelwise=True
            )
        elif kind is LayerKind.DROPOUT:
            x, cache = layers.dropout_forward(x, arch.fc_dropout, rng, train_mode)
        elif kind is LayerKind.FLATTEN:
            x, cache = x.reshape(len(x), -1), x.shape
        else:
            x, cache = layers.dense_forward(x, p[f"{name}.weight"], p[f"{name}.bias"])

        if not np.isfinite(x).all():
            raise NumericError(name, "non-finite activations")
        tape.append((step, cache))

    return x, tape


def forward(
    p: ParamSet,
    batch: np.ndarray,
    train_mode: bool = False,
    rng: typing.Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Logits of shape `(count, 10)` for a batch of `(count, rows, cols)` images

    Dropout is only active in training mode, where `rng` drives its masks.

    Raises:
        ParameterError: If the images don't match the architecture
        NumericError: Naming the first layer to produce non-finite activations
    """
    if train_mode:
        return _run(p, batch, train_mode, rng)[0]
    if not len(batch):
        return np.empty((0, N_CLASSES))

    return np.concatenate(
        [
            _run(p, batch[start : start + EVAL_CHUNK], False, None)[0]
            for start in range(0, len(batch), EVAL_CHUNK)
        ]
    )


def _check_labels(labels: np.ndarray) -> None:
    if len(labels) and (labels.min() < 0 or labels.max() >= N_CLASSES):
        raise ParameterError("labels", labels, f"must be in 0..{N_CLASSES - 1}")


def batch_loss(
    p: ParamSet,
    batch: np.ndarray,
    labels: np.ndarray,
    train_mode: bool = False,
    rng: typing.Optional[np.random.Generator] = None,
) -> float:
    """Mean cross-entropy of a batch, without gradients"""
    _check_labels(labels)
    if train_mode:
        return layers.cross_entropy(forward(p, batch, True, rng), labels)[0]

    # Chunked so evaluation memory stays bounded; weight chunks by their size
    total = 0.0
    for start in range(0, len(batch), EVAL_CHUNK):
        chunk_labels = labels[start : start + EVAL_CHUNK]
        logits = _run(p, batch[start : start + EVAL_CHUNK], False, None)[0]
        total += layers.cross_entropy(logits, chunk_labels)[0] * len(chunk_labels)
    return total / len(labels)


def loss_and_grad(
    p: ParamSet,
    batch: np.ndarray,
    labels: np.ndarray,
    rng: typing.Optional[np.random.Generator] = None,
    train_mode: bool = True,
) -> tuple[float, ParamSet]:
    """Mean cross-entropy of a batch and its gradient for every parameter

    Raises:
        ParameterError: If a label is outside `0..9`
        NumericError: Naming the first layer to produce non-finite activations
    """
    _check_labels(labels)
    logits, tape = _run(p, batch, train_mode, rng)
    loss, dx = layers.cross_entropy(logits, labels)

    grads: dict[str, np.ndarray] = {}
    for (kind, name), cache in reversed(tape):
        if kind is LayerKind.CONV:
            dx, grads[f"{name}.weight"], grads[f"{name}.bias"] = layers.conv2d_backward(dx, cache)
        elif kind is LayerKind.POOL:
            dx = layers.maxpool2_backward(dx, cache)
        elif kind is LayerKind.RELU:
            dx = layers.relu_backward(dx, cache)
        elif kind in (LayerKind.DROPOUT, LayerKind.DROPOUT2D):
            dx = layers.dropout_backward(dx, cache)
        elif kind is LayerKind.FLATTEN:
            dx = dx.reshape(cache)
        else:
            dx, grads[f"{name}.weight"], grads[f"{name}.bias"] = layers.dense_backward(dx, cache)

    return loss, p.map(lambda name, _: grads[name])


def predict(p: ParamSet, batch: np.ndarray) -> np.ndarray:
    """Eval-mode class predictions; ties go to the lowest class id"""
    return forward(p, batch).argmax(axis=1)
