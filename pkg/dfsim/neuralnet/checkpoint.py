"""ParamSet checkpoint files

Layout, all little-endian:
    8 bytes   magic `DFSIMPS1`
    u32       length of the architecture descriptor, then that many bytes of JSON
    u32       tensor count
    per tensor: u16 name length, UTF-8 name, u8 rank, one u32 per dimension
    float64 values of every tensor, in header order
"""
import math
import pathlib
import struct

import numpy as np

from dfsim.errors import FormatError, TruncatedFileError
from dfsim.neuralnet.params import ArchitectureConfig, ParamSet

CHECKPOINT_MAGIC: bytes = b"DFSIMPS1"
CHECKPOINT_SUFFIX: str = ".ckpt"


def save_checkpoint(p: ParamSet, path: pathlib.Path) -> None:
    """Write a parameter set, creating parent directories as needed"""
    descriptor = p.architecture.model_dump_json().encode("utf-8")

    header = [CHECKPOINT_MAGIC, struct.pack("<I", len(descriptor)), descriptor]
    header.append(struct.pack("<I", len(p.names)))
    for name in p.names:
        encoded = name.encode("utf-8")
        shape = p[name].shape
        header.append(struct.pack(f"<H{len(encoded)}sB{len(shape)}I", len(encoded), encoded, len(shape), *shape))

    payload = [p[name].astype("<f8").tobytes() for name in p.names]

    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(header + payload))


class _Reader:
    """Sequential reads that fail cleanly on truncation"""

    def __init__(self, path: pathlib.Path):
        self.path = path
        self.data = path.read_bytes()
        self.offset = 0

    def take(self, size: int) -> bytes:
        chunk = self.data[self.offset : self.offset + size]
        if len(chunk) < size:
            raise TruncatedFileError(self.path, self.offset + size, len(self.data))
        self.offset += size
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: pathlib.Path) -> ParamSet:
    """Read a parameter set written by `save_checkpoint`

    Raises:
        FormatError: If the magic number is wrong
        TruncatedFileError: If the file ends early
    """
    reader = _Reader(path)
    if reader.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise FormatError(path, "not a parameter checkpoint")

    (descriptor_length,) = reader.unpack("<I")
    architecture = ArchitectureConfig.model_validate_json(reader.take(descriptor_length))

    (count,) = reader.unpack("<I")
    shapes: dict[str, tuple[int, ...]] = {}
    for _ in range(count):
        (name_length,) = reader.unpack("<H")
        name = reader.take(name_length).decode("utf-8")
        (rank,) = reader.unpack("<B")
        shapes[name] = reader.unpack(f"<{rank}I")

    tensors = {
        name: np.frombuffer(reader.take(8 * math.prod(shape)), dtype="<f8")
        .astype(np.float64)
        .reshape(shape)
        for name, shape in shapes.items()
    }
    return ParamSet(architecture, tensors)
