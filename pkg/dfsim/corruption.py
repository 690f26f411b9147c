import dataclasses
import logging
import pathlib
import typing

import numpy as np
import pydantic

from dfsim.dataset import FederatedAssignment, LabeledDataset
from dfsim.errors import ConsistencyError, ParameterError
from dfsim.properties import N_CLASSES, InterpolationMode

logger = logging.getLogger(__name__)


class CorruptionSpec(pydantic.BaseModel):
    """What is corrupted, into what, and how strongly"""

    model_config = pydantic.ConfigDict(frozen=True, extra="forbid")

    target_class: int = pydantic.Field(default=9, ge=0, lt=N_CLASSES)
    collateral_class: int = pydantic.Field(default=4, ge=0, lt=N_CLASSES)
    alpha: float = pydantic.Field(default=0.95, ge=0, le=1)
    p: float = pydantic.Field(default=0.0, ge=0, le=1)
    mode: InterpolationMode = InterpolationMode.PIXEL_INTERPOLATION

    @pydantic.model_validator(mode="after")
    def distinct_classes(self) -> "CorruptionSpec":
        if self.target_class == self.collateral_class:
            raise ValueError("target_class and collateral_class must differ")
        return self


class Interpolator(typing.Protocol):
    """Blends a target-class image toward a collateral-class exemplar

    A latent-space implementation can be swapped in for the pixel-space one as
    long as `alpha=0` keeps the target and `alpha=1` yields the exemplar.
    """

    def __call__(self, x_t: np.ndarray, x_c: np.ndarray, alpha: float) -> np.ndarray:
        ...


def interpolate_pixel(x_t: np.ndarray, x_c: np.ndarray, alpha: float) -> np.ndarray:
    """`alpha * x_c + (1 - alpha) * x_t`, clamped to `[0, 1]`

    Raises:
        ParameterError: If the images differ in shape
    """
    if x_t.shape != x_c.shape:
        raise ParameterError("x_c", x_c.shape, f"must match x_t's shape {x_t.shape}")

    blended = np.clip(alpha * x_c + (1 - alpha) * x_t, 0, 1)
    return blended.astype(np.result_type(x_t, x_c), copy=False)


class PixelInterpolator:
    """Linear blending in pixel space"""

    def __call__(self, x_t: np.ndarray, x_c: np.ndarray, alpha: float) -> np.ndarray:
        return interpolate_pixel(x_t, x_c, alpha)


class LabelFlipInterpolator:
    """Replace the features outright; `alpha` is ignored"""

    def __call__(self, x_t: np.ndarray, x_c: np.ndarray, alpha: float) -> np.ndarray:
        return interpolate_pixel(x_t, x_c, 1.0)


INTERPOLATORS: dict[InterpolationMode, Interpolator] = {
    InterpolationMode.PIXEL_INTERPOLATION: PixelInterpolator(),
    InterpolationMode.LABEL_FLIP: LabelFlipInterpolator(),
}


@dataclasses.dataclass(frozen=True, eq=False)
class CorruptionOverlay:
    """Replacement images for corrupted samples, keyed by dataset index

    Labels are never part of the overlay: a corrupted sample keeps its label.
    """

    images: dict[int, np.ndarray] = dataclasses.field(default_factory=dict)
    # Dataset index -> index of the collateral exemplar it was blended with
    exemplars: dict[int, int] = dataclasses.field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.images)

    def __contains__(self, index: int) -> bool:
        return index in self.images

    def materialize(self, ds: LabeledDataset, indices: np.ndarray) -> np.ndarray:
        """The images at these indices, corrupted where the overlay says so"""
        images = ds.images[indices]
        for position, index in enumerate(indices.tolist()):
            replacement = self.images.get(index)
            if replacement is not None:
                images[position] = replacement
        return images

    def apply(self, ds: LabeledDataset) -> LabeledDataset:
        """A full copy of the dataset with every corrupted sample swapped in"""
        return LabeledDataset(
            self.materialize(ds, np.arange(len(ds))), ds.labels, ds.source
        )


def corrupt_assignment(
    ds: LabeledDataset,
    assignment: FederatedAssignment,
    spec: CorruptionSpec,
    rng: np.random.Generator,
    interpolator: typing.Optional[Interpolator] = None,
) -> CorruptionOverlay:
    """Corrupt every flagged sample toward a random collateral exemplar

    Flagged indices are processed in ascending order and each draws a fresh
    exemplar from the whole training set's collateral class.

    Args:
        ds: The pristine training set
        assignment: Where the corrupt flags live
        spec: The classes, strength and mode
        rng: The stream for exemplar draws
        interpolator: Overrides the interpolator implied by `spec.mode`

    Raises:
        ConsistencyError: If a flagged sample isn't of the target class, or
            there are no collateral samples to draw from
    """
    if assignment.target_class != spec.target_class:
        raise ConsistencyError(
            f"Assignment targets class {assignment.target_class}, "
            f"corruption targets class {spec.target_class}."
        )

    flagged = assignment.corrupt_indices
    if not flagged:
        return CorruptionOverlay()

    wrong = [index for index in flagged if ds.labels[index] != spec.target_class]
    if wrong:
        raise ConsistencyError(
            f"{len(wrong)} flagged samples aren't of class {spec.target_class}, e.g. #{wrong[0]}."
        )

    pool = ds.class_indices(spec.collateral_class)
    if not len(pool):
        raise ConsistencyError(f"No samples of collateral class {spec.collateral_class}.")

    blend = interpolator or INTERPOLATORS[spec.mode]
    drawn = pool[rng.integers(len(pool), size=len(flagged))]

    overlay = CorruptionOverlay(
        {
            index: blend(ds.images[index], ds.images[exemplar], spec.alpha)
            for index, exemplar in zip(flagged, drawn.tolist())
        },
        dict(zip(flagged, drawn.tolist())),
    )

    logger.info(
        "Corrupted %d samples of class %d toward class %d (alpha=%s, %s)",
        len(overlay),
        spec.target_class,
        spec.collateral_class,
        spec.alpha,
        spec.mode.value,
    )
    return overlay


def write_pgm(image: np.ndarray, path: pathlib.Path) -> None:
    """Write a `[0, 1]` grayscale image as a binary PGM"""
    rows, cols = image.shape
    pixels = np.round(np.clip(image, 0, 1) * 255).astype(np.uint8)
    path.write_bytes(f"P5\n{cols} {rows}\n255\n".encode("ascii") + pixels.tobytes())
