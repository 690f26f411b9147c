import dataclasses
import enum
import math
import typing

import numpy as np
import pydantic

from dfsim.errors import AggregationError, NumericError, ParameterError
from dfsim.properties import N_CLASSES
from dfsim.seeding import Stream, stream


@enum.unique
class Preset(enum.Enum):
    """The network families every node can train"""

    # conv -> pool -> relu, twice, then two dense layers
    CNN = "cnn"
    # One hidden dense layer, for fast runs
    MLP_SMALL = "mlp_small"


class ArchitectureConfig(pydantic.BaseModel):
    """Layer sizes of the network every node trains

    Defaults describe the compact MNIST CNN: 10 and 20 channels of 5x5
    kernels, 50 hidden units, dropout 0.5 after the second convolution and
    between the dense layers.
    """

    model_config = pydantic.ConfigDict(frozen=True, extra="forbid")

    preset: Preset = Preset.CNN
    image_size: int = pydantic.Field(default=28, ge=1)
    conv1_channels: int = pydantic.Field(default=10, ge=1)
    conv2_channels: int = pydantic.Field(default=20, ge=1)
    kernel_size: int = pydantic.Field(default=5, ge=1)
    fc1_units: int = pydantic.Field(default=50, ge=1)
    conv_dropout: float = pydantic.Field(default=0.5, ge=0, lt=1)
    fc_dropout: float = pydantic.Field(default=0.5, ge=0, lt=1)
    n_classes: int = N_CLASSES

    @pydantic.model_validator(mode="after")
    def consistent_shapes(self) -> "ArchitectureConfig":
        if self.n_classes != N_CLASSES:
            raise ValueError(f"n_classes must be {N_CLASSES}")

        if self.preset is Preset.CNN:
            # Both 2x2 poolings need an even input
            after_conv1 = self.image_size - self.kernel_size + 1
            after_conv2 = after_conv1 // 2 - self.kernel_size + 1
            if after_conv1 <= 0 or after_conv1 % 2 or after_conv2 <= 0 or after_conv2 % 2:
                raise ValueError(
                    f"image_size {self.image_size} and kernel_size {self.kernel_size} "
                    "must leave even, positive sizes before each pooling"
                )
        return self

    @property
    def flat_features(self) -> int:
        """The width of the first dense layer's input"""
        if self.preset is Preset.MLP_SMALL:
            return self.image_size**2

        side = ((self.image_size - self.kernel_size + 1) // 2 - self.kernel_size + 1) // 2
        return self.conv2_channels * side**2

    @property
    def shapes(self) -> dict[str, tuple[int, ...]]:
        """Every parameter tensor's name and shape, in layer order"""
        shapes: dict[str, tuple[int, ...]] = {}
        if self.preset is Preset.CNN:
            k = self.kernel_size
            shapes["conv1.weight"] = (self.conv1_channels, 1, k, k)
            shapes["conv1.bias"] = (self.conv1_channels,)
            shapes["conv2.weight"] = (self.conv2_channels, self.conv1_channels, k, k)
            shapes["conv2.bias"] = (self.conv2_channels,)

        shapes["fc1.weight"] = (self.fc1_units, self.flat_features)
        shapes["fc1.bias"] = (self.fc1_units,)
        shapes["fc2.weight"] = (self.n_classes, self.fc1_units)
        shapes["fc2.bias"] = (self.n_classes,)
        return shapes


@dataclasses.dataclass(frozen=True, eq=False)
class ParamSet:
    """A full, immutable set of network parameters

    This is the unit nodes train, exchange and average. Tensors are float64
    and read-only; every operation returns a new `ParamSet`.
    """

    architecture: ArchitectureConfig
    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        expected = self.architecture.shapes
        found = {name: tensor.shape for name, tensor in self.tensors.items()}
        if list(found.items()) != list(expected.items()):
            raise AggregationError(f"Parameter shapes {found} don't match {expected}.")

        for tensor in self.tensors.values():
            tensor.setflags(write=False)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    @property
    def names(self) -> list[str]:
        return list(self.tensors)

    def map(self, function: typing.Callable[[str, np.ndarray], np.ndarray]) -> "ParamSet":
        """Apply a function to every named tensor"""
        return ParamSet(
            self.architecture,
            {name: np.asarray(function(name, tensor), dtype=np.float64) for name, tensor in self.tensors.items()},
        )

    def zeros_like(self) -> "ParamSet":
        return self.map(lambda name, tensor: np.zeros_like(tensor))

    def flat(self) -> np.ndarray:
        """Every scalar in layer order"""
        return np.concatenate([tensor.ravel() for tensor in self.tensors.values()])

    def identical(self, other: "ParamSet") -> bool:
        """Are both sets bitwise equal?"""
        return self.names == other.names and all(
            np.array_equal(self[name], other[name]) for name in self.names
        )

    def check_finite(self) -> None:
        """
        Raises:
            NumericError: Naming the first tensor holding a non-finite value
        """
        for name, tensor in self.tensors.items():
            if not np.isfinite(tensor).all():
                raise NumericError(name)


def init_params(arch: ArchitectureConfig, seed: int) -> ParamSet:
    """Initialize a network deterministically from a seed

    Weights are drawn uniformly from `±sqrt(6 / fan_in)`, giving a variance of
    `2 / fan_in`; biases start at zero. Nodes that share a seed start from the
    same model.
    """
    rng = stream(Stream.INIT, seed)

    tensors: dict[str, np.ndarray] = {}
    for name, shape in arch.shapes.items():
        if name.endswith(".bias"):
            tensors[name] = np.zeros(shape)
        else:
            bound = math.sqrt(6 / math.prod(shape[1:]))
            tensors[name] = rng.uniform(-bound, bound, size=shape)

    return ParamSet(arch, tensors)


def _check_compatible(reference: ParamSet, other: ParamSet) -> None:
    if reference.architecture != other.architecture:
        raise AggregationError("Parameter sets come from different architectures.")


def average_params(models: typing.Sequence[tuple[ParamSet, float]]) -> ParamSet:
    """Layer-wise weighted mean `Σ w_j θ_j / Σ w_j`

    Zero weights are allowed and contribute nothing. If only one model carries
    weight, or all weighted tensors of a layer are identical, they are returned
    as they are.

    Raises:
        ParameterError: If there are no models, a weight is negative or
            non-finite, or the weights sum to zero
        AggregationError: If the models' shapes differ
    """
    if not models:
        raise ParameterError("models", models, "need at least one model to average")

    for _, weight in models:
        if not math.isfinite(weight) or weight < 0:
            raise ParameterError("weight", weight, "must be finite and non-negative")

    reference = models[0][0]
    for params, _ in models[1:]:
        _check_compatible(reference, params)

    weighted = [(params, float(weight)) for params, weight in models if weight > 0]
    total = math.fsum(weight for _, weight in weighted)
    if not weighted or total == 0:
        raise ParameterError("weights", [weight for _, weight in models], "sum to zero")

    if len(weighted) == 1:
        return weighted[0][0]

    def layer_mean(name: str, _: np.ndarray) -> np.ndarray:
        layers = [params[name] for params, _ in weighted]
        if all(np.array_equal(layers[0], layer) for layer in layers[1:]):
            return layers[0]

        mean = np.zeros_like(layers[0])
        for (_, weight), layer in zip(weighted, layers):
            mean += (weight / total) * layer
        return mean

    return reference.map(layer_mean)
