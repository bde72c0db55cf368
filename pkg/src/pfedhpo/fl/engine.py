"""FedAvg simulation: local training, aggregation, rounds, courses and evaluation."""

from __future__ import annotations

import logging
import math
from concurrent.futures import Executor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from pfedhpo.datasets import DataSet, Federation
from pfedhpo.fl.checkpoints import CheckpointStore
from pfedhpo.fl.models import DivergenceError, ModelSpec, loss_and_grad, metrics
from pfedhpo.params import ParamVector
from pfedhpo.seeding import derive_rng

log = logging.getLogger(__name__)

# Search-space dimension names accepted for each LocalTrainConfig field.
FIELD_ALIASES = {
    "lr": "learning_rate",
    "learning_rate": "learning_rate",
    "wd": "weight_decay",
    "weight_decay": "weight_decay",
    "steps": "local_steps",
    "local_steps": "local_steps",
    "dropout": "dropout",
    "batch_size": "batch_size",
}
_INT_FIELDS = {"local_steps", "batch_size"}


@dataclass(frozen=True)
class LocalTrainConfig:
    learning_rate: float = 0.01
    weight_decay: float = 0.0
    local_steps: int = 1
    dropout: float = 0.0
    batch_size: int = 16

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.local_steps < 0:
            raise ValueError("local_steps must be >= 0")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def with_overrides(self, values: Mapping[str, float]) -> "LocalTrainConfig":
        changes = {}
        for name, v in values.items():
            if name not in FIELD_ALIASES:
                raise KeyError(f"dimension {name!r} does not map to a local training field")
            key = FIELD_ALIASES[name]
            changes[key] = int(round(v)) if key in _INT_FIELDS else float(v)
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)


def local_train(
    spec: ModelSpec,
    w: ParamVector,
    train: DataSet,
    cfg: LocalTrainConfig,
    rng: np.random.Generator,
) -> ParamVector:
    """Run ``cfg.local_steps`` minibatch SGD steps starting from ``w``.

    Minibatches are drawn without replacement from a fresh permutation per
    epoch; an epoch ends when fewer than ``batch_size`` examples remain.
    """
    if cfg.local_steps == 0:
        return w
    n = len(train)
    if n == 0:
        raise ValueError("empty training set")
    bs = min(cfg.batch_size, n)
    values = w.values.copy()
    perm, pos = rng.permutation(n), 0
    # Overflow is reported as DivergenceError below, not as numpy warnings.
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(cfg.local_steps):
            if pos + bs > n:
                perm, pos = rng.permutation(n), 0
            batch = train.subset(perm[pos:pos + bs])
            pos += bs
            _, grad = loss_and_grad(spec, w.replace_values(values), batch,
                                    cfg.weight_decay, cfg.dropout, rng)
            values = values - cfg.learning_rate * grad.values
            if not np.all(np.isfinite(values)):
                raise DivergenceError("non-finite parameters after local step")
    return w.replace_values(values)


def aggregate(updates: Sequence[tuple[ParamVector, float]]) -> ParamVector:
    """Weighted mean of the updates, reduced in the order given."""
    if not updates:
        raise ValueError("no updates to aggregate")
    weights = np.array([float(wt) for _, wt in updates])
    if np.any(weights <= 0):
        raise ValueError("aggregation weights must be positive")
    first = updates[0][0]
    if any(len(u) != len(first) for u, _ in updates):
        raise ValueError("update length mismatch")
    coef = weights / weights.sum()
    acc = np.zeros(len(first))
    for (u, _), c in zip(updates, coef):
        acc += c * u.values
    return first.replace_values(acc)


@dataclass(frozen=True)
class EvalResult:
    losses: tuple[float, ...]
    accuracies: tuple[float, ...]
    sizes: tuple[int, ...]

    @property
    def loss(self) -> float:
        return float(np.dot(self.sizes, self.losses) / np.sum(self.sizes))

    @property
    def accuracy(self) -> float:
        return float(np.dot(self.sizes, self.accuracies) / np.sum(self.sizes))


def evaluate(spec: ModelSpec, w: ParamVector, fed: Federation, split: str = "valid") -> EvalResult:
    losses, accs, sizes = [], [], []
    for client in fed:
        data = client.split(split)
        loss, acc = metrics(spec, w, data)
        losses.append(loss)
        accs.append(acc)
        sizes.append(len(data))
    return EvalResult(tuple(losses), tuple(accs), tuple(sizes))


class RoundStreams:
    """Per-round, per-client rng streams keyed by ``(seed, label, *prefix, round, client)``."""

    def __init__(self, seed: int, label: str, *prefix: int):
        self.seed = seed
        self.label = label
        self.prefix = prefix

    def __call__(self, round_index: int, num_clients: int) -> list[np.random.Generator]:
        return [derive_rng(self.seed, self.label, *self.prefix, round_index, i)
                for i in range(num_clients)]


def run_round(
    spec: ModelSpec,
    w: ParamVector,
    fed: Federation,
    configs: Sequence[LocalTrainConfig],
    rngs: Sequence[np.random.Generator],
    executor: Executor | None = None,
) -> ParamVector:
    """One FedAvg round with full participation, weighted by |T_i|."""
    if len(configs) != len(fed) or len(rngs) != len(fed):
        raise ValueError("need one config and one rng per client")

    def work(i: int) -> ParamVector:
        return local_train(spec, w, fed[i].train, configs[i], rngs[i])

    if executor is None:
        results = [work(i) for i in range(len(fed))]
    else:
        results = list(executor.map(work, range(len(fed))))
    return aggregate([(u, len(c.train)) for u, c in zip(results, fed)])


@dataclass
class CourseResult:
    final: ParamVector
    store: CheckpointStore | None = None
    history: list[dict] = field(default_factory=list)

    def best_round(self, key: str = "valid_accuracy") -> dict:
        """Earliest round record with the highest ``key``."""
        if not self.history:
            raise ValueError("course tracked no metrics")
        return max(self.history, key=lambda rec: (rec[key], -rec["round"]))


def run_course(
    spec: ModelSpec,
    w0: ParamVector,
    fed: Federation,
    configs: Sequence[LocalTrainConfig],
    rounds: int,
    streams: Callable[[int, int], Sequence[np.random.Generator]],
    capture: bool = False,
    start_round: int = 0,
    track: Sequence[str] = ("valid",),
    executor: Executor | None = None,
    metadata: dict | None = None,
) -> CourseResult:
    """Run ``rounds`` sequential FedAvg rounds starting after ``start_round``.

    Round ``start_round + k`` draws its client streams from
    ``streams(start_round + k, n)``, so a course resumed from a checkpoint
    replays the same randomness as the uninterrupted course.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    store = CheckpointStore(spec, metadata or {}) if capture else None
    history = []
    w = w0
    for k in range(1, rounds + 1):
        r = start_round + k
        try:
            w = run_round(spec, w, fed, configs, streams(r, len(fed)), executor)
        except DivergenceError as exc:
            raise DivergenceError(f"round {r}: {exc}") from None
        if store is not None:
            store.put(k, w)
        if track:
            rec = {"round": r}
            for split in track:
                res = evaluate(spec, w, fed, split)
                rec[f"{split}_loss"] = res.loss
                rec[f"{split}_accuracy"] = res.accuracy
            if not all(math.isfinite(v) for v in rec.values()):
                raise DivergenceError(f"round {r}: non-finite metrics")
            history.append(rec)
    return CourseResult(w, store, history)
