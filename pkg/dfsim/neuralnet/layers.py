"""Forward and backward passes of the individual layer kinds

Every forward function returns its output and whatever its backward pass
needs; every backward function takes the upstream gradient and that cache.
Image tensors are laid out `(batch, channels, rows, cols)`.
"""
import typing

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special


def conv2d_forward(
    x: np.ndarray, weight: np.ndarray, bias: np.ndarray
) -> tuple[np.ndarray, tuple]:
    """Valid cross-correlation with stride 1"""
    k = weight.shape[-1]
    windows = sliding_window_view(x, (k, k), axis=(2, 3))
    # windows: (batch, in, rows, cols, k, k) . weight: (out, in, k, k)
    out = np.tensordot(windows, weight, axes=([1, 4, 5], [1, 2, 3]))
    out = out.transpose(0, 3, 1, 2) + bias[None, :, None, None]
    return np.ascontiguousarray(out), (x, weight, windows)


def conv2d_backward(
    dout: np.ndarray, cache: tuple
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x, weight, windows = cache
    k = weight.shape[-1]

    dweight = np.tensordot(dout, windows, axes=([0, 2, 3], [0, 2, 3]))
    dbias = dout.sum(axis=(0, 2, 3))

    # Full convolution of the gradient with the flipped kernels
    padded = np.pad(dout, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
    padded_windows = sliding_window_view(padded, (k, k), axis=(2, 3))
    flipped = weight[:, :, ::-1, ::-1]
    dx = np.tensordot(padded_windows, flipped, axes=([1, 4, 5], [0, 2, 3]))

    return np.ascontiguousarray(dx.transpose(0, 3, 1, 2)), dweight, dbias


def _pool_blocks(x: np.ndarray) -> np.ndarray:
    batch, channels, rows, cols = x.shape
    return (
        x.reshape(batch, channels, rows // 2, 2, cols // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(batch, channels, rows // 2, cols // 2, 4)
    )


def maxpool2_forward(x: np.ndarray) -> tuple[np.ndarray, tuple]:
    """2x2 max pooling with stride 2; ties go to the first maximum"""
    blocks = _pool_blocks(x)
    winners = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, winners[..., None], axis=-1)[..., 0]
    return out, (x.shape, winners)


def maxpool2_backward(dout: np.ndarray, cache: tuple) -> np.ndarray:
    shape, winners = cache
    batch, channels, rows, cols = shape

    blocks = np.zeros((*winners.shape, 4))
    np.put_along_axis(blocks, winners[..., None], dout[..., None], axis=-1)

    return (
        blocks.reshape(batch, channels, rows // 2, cols // 2, 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(shape)
    )


def relu_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mask = x > 0
    return x * mask, mask


def relu_backward(dout: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return dout * mask


def dropout_forward(
    x: np.ndarray,
    rate: float,
    rng: typing.Optional[np.random.Generator],
    train_mode: bool,
    channelwise: bool = False,
) -> tuple[np.ndarray, typing.Optional[np.ndarray]]:
    """Inverted dropout; the identity outside training

    Args:
        channelwise: Drop whole feature maps rather than single activations
    """
    if not train_mode or rate == 0:
        return x, None
    if rng is None:
        raise ValueError("Dropout in training mode needs a random stream.")

    shape = (*x.shape[:2], *(1,) * (x.ndim - 2)) if channelwise else x.shape
    mask = (rng.random(shape) >= rate) / (1 - rate)
    return x * mask, mask


def dropout_backward(dout: np.ndarray, mask: typing.Optional[np.ndarray]) -> np.ndarray:
    return dout if mask is None else dout * mask


def dense_forward(
    x: np.ndarray, weight: np.ndarray, bias: np.ndarray
) -> tuple[np.ndarray, tuple]:
    """`x @ weight.T + bias`, with `weight` laid out `(out, in)`"""
    return x @ weight.T + bias, (x, weight)


def dense_backward(
    dout: np.ndarray, cache: tuple
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x, weight = cache
    return dout @ weight, dout.T @ x, dout.sum(axis=0)


def cross_entropy(
    logits: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient with respect to the logits

    Uses a log-sum-exp formulation, so large logits don't overflow.
    """
    batch = len(labels)
    log_probs = special.log_softmax(logits, axis=1)
    loss = -float(log_probs[np.arange(batch), labels].mean())

    dlogits = np.exp(log_probs)
    dlogits[np.arange(batch), labels] -= 1
    return loss, dlogits / batch
