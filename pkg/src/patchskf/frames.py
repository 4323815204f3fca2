"""Image sequences and their on-disk format.

A frame file is one line of JSON, ``{"height":h,"width":w,"frames":T,"dtype":"f32le"}``,
a newline, then ``T*h*w`` little-endian float32 values, frame-major and
row-major within a frame. Pixel ``(row, col)`` of an ``h x w`` frame is
state index ``row * w + col`` everywhere in this package.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DTYPE = "f32le"


@dataclass(frozen=True)
class FrameSequence:
    """Stack of images with shape ``(frames, height, width)``."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 3:
            raise ValueError(f"frames must have shape (T, h, w), got {data.shape}")
        object.__setattr__(self, "data", data)

    @classmethod
    def from_vectors(cls, vectors, dims: tuple[int, int]) -> "FrameSequence":
        vectors = np.asarray(vectors, dtype=float)
        return cls(vectors.reshape(len(vectors), *dims))

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def dims(self) -> tuple[int, int]:
        return self.height, self.width

    def __len__(self) -> int:
        return self.frames

    def vectors(self) -> np.ndarray:
        """``(T, h*w)`` view in row-major pixel order."""
        return self.data.reshape(self.frames, -1)


def write_frames(path, seq: FrameSequence) -> None:
    header = {"height": seq.height, "width": seq.width, "frames": seq.frames, "dtype": DTYPE}
    with open(path, "wb") as f:
        f.write(json.dumps(header, separators=(",", ":")).encode("ascii"))
        f.write(b"\n")
        f.write(np.ascontiguousarray(seq.data, dtype="<f4").tobytes())


def read_frames(path) -> FrameSequence:
    raw = Path(path).read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise ValueError(f"{path}: missing header line")
    header = json.loads(raw[:newline])
    if header.get("dtype") != DTYPE:
        raise ValueError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    shape = (int(header["frames"]), int(header["height"]), int(header["width"]))
    body = np.frombuffer(raw, dtype="<f4", offset=newline + 1)
    if body.size != np.prod(shape):
        raise ValueError(f"{path}: expected {np.prod(shape)} values, found {body.size}")
    return FrameSequence(body.reshape(shape).astype(float))
