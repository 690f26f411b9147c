import os
import pathlib
import struct
import typing

import numpy as np
import pytest

from dfsim.dataset import IMAGES_MAGIC, LABELS_MAGIC, LabeledDataset, Source
from dfsim.localtrain import TrainConfig
from dfsim.neuralnet import ArchitectureConfig, Preset
from dfsim.properties import N_CLASSES

MNIST_DIR_VARIABLE = "DFSIM_MNIST_DIR"
# Class prototypes are shared by every synthetic dataset, so train and test agree
PROTOTYPE_SEED = 1234


def pytest_configure(config):
    config.addinivalue_line(
        "markers", f"slow: needs the MNIST IDX files in ${MNIST_DIR_VARIABLE}"
    )


def pytest_collection_modifyitems(config, items):
    if os.environ.get(MNIST_DIR_VARIABLE):
        return

    skip = pytest.mark.skip(reason=f"${MNIST_DIR_VARIABLE} isn't set")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def synthetic_dataset(
    counts: typing.Sequence[int],
    image_size: int = 8,
    seed: int = 0,
    noise: float = 0.15,
    source: Source = Source.TRAIN,
) -> LabeledDataset:
    """Noisy copies of one fixed prototype image per class, shuffled"""
    prototypes = np.random.default_rng(PROTOTYPE_SEED).random(
        (N_CLASSES, image_size, image_size)
    )
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(len(counts)), counts)
    labels = labels[rng.permutation(len(labels))]
    images = prototypes[labels] + rng.normal(0, noise, (len(labels), image_size, image_size))
    return LabeledDataset(
        np.clip(images, 0, 1).astype(np.float32), labels.astype(np.int64), source
    )


def write_idx(
    directory: pathlib.Path, prefix: str, ds: LabeledDataset
) -> tuple[pathlib.Path, pathlib.Path]:
    """Write a dataset as an IDX image file and label file"""
    count, rows, cols = ds.images.shape
    images_path = directory / f"{prefix}-images-idx3-ubyte"
    labels_path = directory / f"{prefix}-labels-idx1-ubyte"

    pixels = np.round(ds.images * 255).astype(np.uint8)
    images_path.write_bytes(struct.pack(">4I", IMAGES_MAGIC, count, rows, cols) + pixels.tobytes())
    labels_path.write_bytes(
        struct.pack(">2I", LABELS_MAGIC, count) + ds.labels.astype(np.uint8).tobytes()
    )
    return images_path, labels_path


@pytest.fixture
def dataset() -> LabeledDataset:
    """40 samples of every class"""
    return synthetic_dataset([40] * N_CLASSES)


@pytest.fixture
def mlp() -> ArchitectureConfig:
    return ArchitectureConfig(preset=Preset.MLP_SMALL, image_size=8, fc1_units=16, fc_dropout=0.0)


@pytest.fixture
def cnn() -> ArchitectureConfig:
    """The smallest CNN the layer plan allows"""
    return ArchitectureConfig(image_size=16, conv1_channels=2, conv2_channels=3, fc1_units=8)


@pytest.fixture
def fast_training() -> TrainConfig:
    return TrainConfig(max_local_epochs=2, batch_size=16, lr=0.05)


@pytest.fixture
def idx_files(tmp_path: pathlib.Path) -> dict[str, pathlib.Path]:
    """Synthetic train and test IDX files of 8x8 images"""
    data_dir = tmp_path / "data"
    data_dir.mkdir()
    train_images, train_labels = write_idx(data_dir, "train", synthetic_dataset([30] * N_CLASSES))
    test_images, test_labels = write_idx(
        data_dir, "test", synthetic_dataset([10] * N_CLASSES, seed=1, source=Source.TEST)
    )
    return {
        "train_images": train_images,
        "train_labels": train_labels,
        "test_images": test_images,
        "test_labels": test_labels,
    }


CONFIG_TEMPLATE = """\
[experiment]
paradigm = {paradigm}
scheme = {scheme}
alpha = 0.95
p = {p}
seeds = 1, 2
n_nodes = 4
rounds = 2
output_dir = {output_dir}

[training]
max_local_epochs = 1
batch_size = 16
lr = 0.05

[model]
preset = mlp_small
image_size = 8
fc1_units = 8

[data]
train_images = {train_images}
train_labels = {train_labels}
test_images = {test_images}
test_labels = {test_labels}
"""


@pytest.fixture
def write_config(
    tmp_path: pathlib.Path, idx_files: dict[str, pathlib.Path]
) -> typing.Callable[..., pathlib.Path]:
    """Write a small runnable config; keyword arguments fill the template"""

    def write(name: str = "experiment.ini", extra: str = "", **fields: typing.Any) -> pathlib.Path:
        values = {
            "paradigm": "dfl",
            "scheme": "balanced",
            "p": "0.0, 0.5",
            "output_dir": tmp_path / "results",
            **idx_files,
            **fields,
        }
        path = tmp_path / name
        path.write_text(CONFIG_TEMPLATE.format(**values) + extra)
        return path

    return write


@pytest.fixture(scope="session")
def mnist_dir() -> pathlib.Path:
    return pathlib.Path(os.environ[MNIST_DIR_VARIABLE])
