"""Flat float64 parameter vectors with named slices, and their binary file format."""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"PFHPO\x00v1"
_HEADER = struct.Struct("<8sQ")


@dataclass(frozen=True)
class Slot:
    name: str
    offset: int
    shape: tuple[int, ...]

    @property
    def size(self) -> int:
        return math.prod(self.shape)


def make_layout(shapes: list[tuple[str, tuple[int, ...]]]) -> tuple[Slot, ...]:
    slots, offset = [], 0
    for name, shape in shapes:
        slot = Slot(name, offset, tuple(int(s) for s in shape))
        slots.append(slot)
        offset += slot.size
    return tuple(slots)


@dataclass(frozen=True, eq=False)
class ParamVector:
    """A read-only flat parameter array plus a layout of named slices."""

    values: np.ndarray
    layout: tuple[Slot, ...]

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=np.float64, copy=True).ravel()
        expected = sum(s.size for s in self.layout)
        if v.size != expected:
            raise ValueError(f"expected {expected} parameters, got {v.size}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return int(self.values.size)

    def __getitem__(self, name: str) -> np.ndarray:
        for slot in self.layout:
            if slot.name == name:
                return self.values[slot.offset:slot.offset + slot.size].reshape(slot.shape)
        raise KeyError(name)

    def replace_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(values, self.layout)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def digest(self) -> str:
        return hashlib.sha256(self.values.tobytes()).hexdigest()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ParamVector):
            return NotImplemented
        return self.layout == other.layout and np.array_equal(self.values, other.values)


def write_param_file(path: str | Path, values: np.ndarray) -> None:
    v = np.ascontiguousarray(values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, v.size))
        fh.write(v.tobytes())


def read_param_file(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    body = data[_HEADER.size:]
    if len(body) != 8 * count:
        raise ValueError(f"{path}: expected {count} parameters, found {len(body) // 8}")
    return np.frombuffer(body, dtype="<f8").astype(np.float64)
