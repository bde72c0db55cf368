"""Client encodings from averaged random Fourier features.

Each example ``x`` is mapped to ``phi(x)_j = sqrt(2/D) cos(omega_j . x [+ b_j])``
with ``omega_j ~ N(0, I)``; a client's encoding is the mean of ``phi`` over its
training examples. One projection is drawn per experiment and shared by all
clients so that encodings are comparable.

By default no random phase is used. Without it ``E[phi(x).phi(x')]`` equals
``k(x - x') + k(x + x')`` rather than the RBF kernel ``k``; pass
``phase=True`` for the unbiased estimator.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from pfedhpo.datasets import DataSet, Federation
from pfedhpo.sampling import standard_normal
from pfedhpo.seeding import derive_rng

DEFAULT_DIM = 128


@dataclass(frozen=True, eq=False)
class RffProjection:
    omegas: np.ndarray
    phases: np.ndarray | None
    seed: int

    @property
    def dim(self) -> int:
        return int(self.omegas.shape[0])

    @property
    def num_features(self) -> int:
        return int(self.omegas.shape[1])

    @property
    def mode(self) -> str:
        return "phase" if self.phases is not None else "plain"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RffProjection):
            return NotImplemented
        same_phase = (self.phases is None and other.phases is None) or (
            self.phases is not None and other.phases is not None
            and np.array_equal(self.phases, other.phases))
        return np.array_equal(self.omegas, other.omegas) and same_phase and self.seed == other.seed


def draw_projection(num_features: int, dim: int = DEFAULT_DIM, seed: int = 0,
                    phase: bool = False) -> RffProjection:
    if dim < 1 or num_features < 1:
        raise ValueError("dimensions must be >= 1")
    rng = derive_rng(seed, "rff")
    omegas = standard_normal(rng, (dim, num_features))
    phases = rng.uniform(0.0, 2.0 * math.pi, dim) if phase else None
    for a in (omegas, phases):
        if a is not None:
            a.setflags(write=False)
    return RffProjection(omegas, phases, seed)


def rff_features(x: np.ndarray, proj: RffProjection) -> np.ndarray:
    """Features of one example (shape ``[F]``) or a batch (shape ``[N, F]``)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != proj.num_features:
        raise ValueError(f"expected {proj.num_features} features, got {x.shape[-1]}")
    z = x @ proj.omegas.T
    if proj.phases is not None:
        z = z + proj.phases
    return math.sqrt(2.0 / proj.dim) * np.cos(z)


def encode_client(train: DataSet, proj: RffProjection) -> np.ndarray:
    if len(train) == 0:
        raise ValueError("cannot encode an empty dataset")
    return rff_features(train.features, proj).mean(axis=0)


def encode_federation(fed: Federation, proj: RffProjection) -> Federation:
    return fed.with_encodings([encode_client(c.train, proj) for c in fed])


def encodings_to_json(fed: Federation, proj: RffProjection) -> str:
    doc = {
        "projection_seed": proj.seed,
        "mode": proj.mode,
        "dim": proj.dim,
        "encodings": [[float(v) for v in z] for z in fed.encodings],
    }
    return json.dumps(doc, indent=1) + "\n"
