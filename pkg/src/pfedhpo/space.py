"""Hyperparameter search spaces, configurations and the per-client product space."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Iterator, Sequence

import numpy as np
import yaml

DISCRETE = "discrete"
CONTINUOUS = "continuous"
LINEAR = "linear"
LOG = "log"

# Beyond this many bits the personalized size is reported as math.inf.
MAX_EXACT_BITS = 1 << 20


class SpaceError(ValueError):
    pass


@dataclass(frozen=True)
class Dimension:
    """One searchable hyperparameter.

    Discrete dimensions hold an ordered tuple of candidate values and are
    sampled as candidate indices. Continuous dimensions hold ``[lo, hi]`` and
    a ``linear`` or ``log`` scale used to map a unit-interval draw.
    """

    name: str
    kind: str = DISCRETE
    candidates: tuple[float, ...] = ()
    lo: float | None = None
    hi: float | None = None
    scale: str = LINEAR

    def __post_init__(self) -> None:
        if not self.name:
            raise SpaceError("dimension name must be non-empty")
        if self.kind == DISCRETE:
            cands = tuple(float(c) for c in self.candidates)
            object.__setattr__(self, "candidates", cands)
            if not cands:
                raise SpaceError(f"{self.name}: discrete dimension needs candidates")
            if not all(math.isfinite(c) for c in cands):
                raise SpaceError(f"{self.name}: candidates must be finite")
            if any(b <= a for a, b in zip(cands, cands[1:])):
                raise SpaceError(f"{self.name}: candidates must be strictly increasing")
        elif self.kind == CONTINUOUS:
            if self.lo is None or self.hi is None:
                raise SpaceError(f"{self.name}: continuous dimension needs lo and hi")
            lo, hi = float(self.lo), float(self.hi)
            object.__setattr__(self, "lo", lo)
            object.__setattr__(self, "hi", hi)
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo >= hi:
                raise SpaceError(f"{self.name}: need finite lo < hi")
            if self.scale not in (LINEAR, LOG):
                raise SpaceError(f"{self.name}: unknown scale {self.scale!r}")
            if self.scale == LOG and lo <= 0:
                raise SpaceError(f"{self.name}: log scale requires lo > 0")
        else:
            raise SpaceError(f"{self.name}: unknown kind {self.kind!r}")

    @property
    def is_discrete(self) -> bool:
        return self.kind == DISCRETE

    @property
    def num_outputs(self) -> int:
        """Width of the policy head for this dimension."""
        return len(self.candidates) if self.is_discrete else 2

    def from_unit(self, u: float) -> float:
        """Map ``u`` in [0, 1] onto ``[lo, hi]`` according to the scale."""
        u = min(max(float(u), 0.0), 1.0)
        if self.scale == LOG:
            value = math.exp(math.log(self.lo) + u * (math.log(self.hi) - math.log(self.lo)))
        else:
            value = self.lo + u * (self.hi - self.lo)
        return min(max(value, self.lo), self.hi)

    def to_dict(self) -> dict[str, Any]:
        if self.is_discrete:
            return {"name": self.name, "kind": self.kind, "candidates": list(self.candidates)}
        return {"name": self.name, "kind": self.kind, "lo": self.lo, "hi": self.hi, "scale": self.scale}


@dataclass(frozen=True)
class SearchSpace:
    dims: tuple[Dimension, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "dims", tuple(self.dims))
        names = [d.name for d in self.dims]
        if len(set(names)) != len(names):
            raise SpaceError(f"duplicate dimension names in {names}")

    def __len__(self) -> int:
        return len(self.dims)

    def __iter__(self) -> Iterator[Dimension]:
        return iter(self.dims)

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dims]

    @property
    def all_discrete(self) -> bool:
        return all(d.is_discrete for d in self.dims)

    def to_dict(self) -> dict[str, Any]:
        return {"dims": [d.to_dict() for d in self.dims]}

    @classmethod
    def from_dict(cls, data: dict[str, Any] | Sequence[dict[str, Any]]) -> "SearchSpace":
        blocks = data["dims"] if isinstance(data, dict) else data
        dims = []
        for i, block in enumerate(blocks):
            try:
                kind = block.get("kind", DISCRETE)
                if kind == DISCRETE:
                    dims.append(Dimension(block["name"], DISCRETE, tuple(block["candidates"])))
                else:
                    dims.append(
                        Dimension(block["name"], kind, lo=block["lo"], hi=block["hi"],
                                  scale=block.get("scale", LINEAR))
                    )
            except KeyError as exc:
                raise SpaceError(f"space.dims[{i}]: missing field {exc.args[0]!r}") from None
        return cls(tuple(dims))


def render(space: SearchSpace) -> str:
    return yaml.safe_dump(space.to_dict(), sort_keys=False)


def parse(text: str) -> SearchSpace:
    return SearchSpace.from_dict(yaml.safe_load(text))


@dataclass(frozen=True)
class ConfigSample:
    """One client's drawn configuration.

    ``values`` holds a candidate index for discrete dimensions and the mapped
    real value for continuous ones. ``raw`` keeps the pre-squash Gaussian draw
    of each continuous dimension (``None`` for discrete) so the policy score
    can be recomputed.
    """

    values: tuple[float | int, ...]
    log_prob: float = 0.0
    raw: tuple[float | None, ...] | None = None

    def to_dict(self) -> dict[str, Any]:
        return {"values": list(self.values), "log_prob": self.log_prob,
                "raw": None if self.raw is None else list(self.raw)}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ConfigSample":
        raw = data.get("raw")
        return cls(tuple(data["values"]), float(data.get("log_prob", 0.0)),
                   None if raw is None else tuple(raw))


@dataclass(frozen=True)
class PersonalizedAssignment:
    per_client: tuple[ConfigSample, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "per_client", tuple(self.per_client))

    def __len__(self) -> int:
        return len(self.per_client)

    def __getitem__(self, i: int) -> ConfigSample:
        return self.per_client[i]

    @property
    def log_prob(self) -> float:
        return float(sum(c.log_prob for c in self.per_client))

    @classmethod
    def uniform(cls, sample: ConfigSample, n: int) -> "PersonalizedAssignment":
        return cls(tuple(sample for _ in range(n)))


def space_size(space: SearchSpace) -> int | float:
    """Number of configurations, or ``math.inf`` if any dimension is continuous."""
    if not space.all_discrete:
        return math.inf
    return math.prod(len(d.candidates) for d in space.dims)


def personalized_space_size(space: SearchSpace, n: int) -> int | float:
    if n < 1:
        raise SpaceError("client count must be >= 1")
    base = space_size(space)
    if base == math.inf:
        return math.inf
    if base > 1 and n * math.log2(base) > MAX_EXACT_BITS:
        return math.inf
    return base ** n


def validate_sample(space: SearchSpace, sample: ConfigSample) -> None:
    if len(sample.values) != len(space.dims):
        raise SpaceError(f"sample has {len(sample.values)} values for {len(space.dims)} dims")
    for dim, v in zip(space.dims, sample.values):
        if dim.is_discrete:
            if int(v) != v or not 0 <= int(v) < len(dim.candidates):
                raise SpaceError(f"{dim.name}: index {v} out of range")
        elif not (dim.lo <= v <= dim.hi):
            raise SpaceError(f"{dim.name}: value {v} outside [{dim.lo}, {dim.hi}]")


def decode(space: SearchSpace, sample: ConfigSample) -> dict[str, float]:
    validate_sample(space, sample)
    out = {}
    for dim, v in zip(space.dims, sample.values):
        out[dim.name] = dim.candidates[int(v)] if dim.is_discrete else float(v)
    return out


def encode_values(space: SearchSpace, values: dict[str, float]) -> ConfigSample:
    """Inverse of :func:`decode` for all-discrete spaces (exact candidate match)."""
    idx = []
    for dim in space.dims:
        if not dim.is_discrete:
            raise SpaceError("encode_values supports discrete dimensions only")
        try:
            idx.append(dim.candidates.index(float(values[dim.name])))
        except ValueError:
            raise SpaceError(f"{dim.name}: {values[dim.name]} is not a candidate") from None
    return ConfigSample(tuple(idx))


def iter_samples(space: SearchSpace) -> Iterator[ConfigSample]:
    """Enumerate every configuration of an all-discrete space in index order."""
    if not space.all_discrete:
        raise SpaceError("cannot enumerate a space with continuous dimensions")
    ranges = [range(len(d.candidates)) for d in space.dims]
    for combo in itertools.product(*ranges):
        yield ConfigSample(tuple(combo))


def uniform_sample(space: SearchSpace, rng: np.random.Generator) -> ConfigSample:
    """Draw uniformly: discrete indices uniformly, continuous uniformly on the scale."""
    values: list[float | int] = []
    log_prob = 0.0
    for dim in space.dims:
        if dim.is_discrete:
            values.append(int(rng.integers(len(dim.candidates))))
            log_prob -= math.log(len(dim.candidates))
        else:
            values.append(dim.from_unit(rng.random()))
    return ConfigSample(tuple(values), log_prob)
