import math

import numpy as np

from dfsim.errors import NumericError, ParameterError
from dfsim.neuralnet.params import ParamSet


def sgd_momentum_step(
    p: ParamSet,
    grads: ParamSet,
    velocity: ParamSet,
    lr: float,
    momentum: float,
) -> tuple[ParamSet, ParamSet]:
    """One heavy-ball step: `v <- momentum * v + g`, then `p <- p - lr * v`

    Returns:
        The updated parameters and velocity

    Raises:
        ParameterError: If `lr <= 0` or `momentum` is outside `[0, 1)`
        NumericError: Naming the first non-finite input tensor
    """
    if not (math.isfinite(lr) and lr > 0):
        raise ParameterError("lr", lr, "must be positive")
    if not 0 <= momentum < 1:
        raise ParameterError("momentum", momentum, "must be in [0, 1)")

    for params in (p, grads, velocity):
        params.check_finite()

    velocity = velocity.map(lambda name, v: momentum * v + grads[name])
    updated = p.map(lambda name, w: w - lr * velocity[name])

    if not np.isfinite(updated.flat()).all():
        raise NumericError("update", "step produced non-finite parameters")

    return updated, velocity
