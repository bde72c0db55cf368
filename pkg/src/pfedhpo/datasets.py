"""In-memory datasets, client bundles and federations."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np


def _frozen(a: np.ndarray, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DataSet:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        x = _frozen(self.features, np.float64)
        y = _frozen(self.labels, np.int64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise ValueError(f"features {x.shape} and labels {y.shape} do not line up")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def num_features(self) -> int:
        return int(self.features.shape[1])

    def subset(self, idx: Sequence[int] | np.ndarray) -> "DataSet":
        idx = np.asarray(idx, dtype=np.int64)
        return DataSet(self.features[idx], self.labels[idx], self.num_classes)

    def scaled(self, factor: float) -> "DataSet":
        return DataSet(self.features * factor, self.labels, self.num_classes)

    def class_histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DataSet):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )

    @classmethod
    def concat(cls, parts: Sequence["DataSet"]) -> "DataSet":
        if not parts:
            raise ValueError("nothing to concatenate")
        k = max(p.num_classes for p in parts)
        return cls(np.concatenate([p.features for p in parts]),
                   np.concatenate([p.labels for p in parts]), k)


@dataclass(frozen=True, eq=False)
class ClientBundle:
    id: int
    train: DataSet
    valid: DataSet
    test: DataSet
    encoding: np.ndarray | None = None

    def __post_init__(self) -> None:
        if len(self.valid) < 1:
            raise ValueError(f"client {self.id}: validation split is empty")
        if self.encoding is not None:
            object.__setattr__(self, "encoding", _frozen(self.encoding, np.float64))

    def split(self, name: str) -> DataSet:
        if name not in ("train", "valid", "test"):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ClientBundle):
            return NotImplemented
        enc_eq = (self.encoding is None and other.encoding is None) or (
            self.encoding is not None and other.encoding is not None
            and np.array_equal(self.encoding, other.encoding)
        )
        return (self.id == other.id and self.train == other.train and self.valid == other.valid
                and self.test == other.test and enc_eq)


@dataclass(frozen=True)
class Federation:
    clients: tuple[ClientBundle, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        clients = tuple(self.clients)
        if [c.id for c in clients] != list(range(len(clients))):
            raise ValueError("client ids must be 0..n-1 in order")
        object.__setattr__(self, "clients", clients)

    def __len__(self) -> int:
        return len(self.clients)

    def __iter__(self) -> Iterator[ClientBundle]:
        return iter(self.clients)

    def __getitem__(self, i: int) -> ClientBundle:
        return self.clients[i]

    @property
    def total_valid(self) -> int:
        return sum(len(c.valid) for c in self.clients)

    @property
    def num_features(self) -> int:
        return self.clients[0].train.num_features

    @property
    def num_classes(self) -> int:
        return max(c.train.num_classes for c in self.clients)

    @property
    def encodings(self) -> list[np.ndarray]:
        missing = [c.id for c in self.clients if c.encoding is None]
        if missing:
            raise ValueError(f"clients {missing} have no encoding")
        return [c.encoding for c in self.clients]

    def with_encodings(self, encodings: Sequence[np.ndarray]) -> "Federation":
        if len(encodings) != len(self.clients):
            raise ValueError("one encoding per client required")
        return Federation(tuple(replace(c, encoding=z) for c, z in zip(self.clients, encodings)))
