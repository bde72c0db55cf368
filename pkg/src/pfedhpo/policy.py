"""The hyperparameter policy network and its REINFORCE update.

A tanh MLP trunk maps a client encoding to a shared representation; one
linear head per search dimension turns it into distribution parameters:

* discrete dimension -> logits over the candidates (Categorical),
* continuous dimension -> ``(mean_raw, var_raw)`` of a Gaussian over a
  pre-squash variable ``g``; ``var = clip(exp(var_raw), VAR_MIN, VAR_MAX)``.
  The sampled ``g`` is squashed with a sigmoid and mapped onto the
  dimension's range, and its log-density is taken on ``g`` itself.

All gradients are analytic. Client encodings are processed as a batch.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from pfedhpo.fl.models import glorot_init
from pfedhpo.params import ParamVector, make_layout, read_param_file, write_param_file
from pfedhpo.sampling import box_muller
from pfedhpo.space import ConfigSample, PersonalizedAssignment, SearchSpace, render

VAR_MIN = 1e-6
VAR_MAX = 10.0
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PolicySpec:
    input_dim: int
    space: SearchSpace
    hidden: tuple[int, ...] = (64, 64)
    # The trunk sees (z - input_center) * input_scale.
    input_scale: float = 1.0
    input_center: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("policy widths must be positive")
        if not (math.isfinite(self.input_scale) and self.input_scale > 0):
            raise ValueError("input_scale must be positive and finite")
        if self.input_center is not None:
            center = tuple(float(c) for c in self.input_center)
            if len(center) != self.input_dim or not all(math.isfinite(c) for c in center):
                raise ValueError(f"input_center must hold {self.input_dim} finite values")
            object.__setattr__(self, "input_center", center)
        if len(self.space) == 0:
            raise ValueError("search space has no dimensions")

    @property
    def trunk_widths(self) -> list[int]:
        return [self.input_dim, *self.hidden]

    @property
    def rep_dim(self) -> int:
        return self.trunk_widths[-1]

    def layout(self):
        shapes = []
        for i, (a, b) in enumerate(zip(self.trunk_widths, self.trunk_widths[1:])):
            shapes += [(f"T{i}", (a, b)), (f"t{i}", (b,))]
        for j, dim in enumerate(self.space.dims):
            shapes += [(f"H{j}", (self.rep_dim, dim.num_outputs)), (f"h{j}", (dim.num_outputs,))]
        return make_layout(shapes)

    def space_hash(self) -> str:
        return hashlib.sha256(render(self.space).encode()).hexdigest()[:16]


def init_policy(spec: PolicySpec, rng: np.random.Generator) -> ParamVector:
    """Glorot trunk, zero heads: every Categorical starts uniform and every Gaussian at N(0, 1)."""
    layout = spec.layout()
    return ParamVector(glorot_init(layout, rng, weight_prefix="T"), layout)


@dataclass(frozen=True, eq=False)
class Categorical:
    probs: np.ndarray
    log_probs: np.ndarray


@dataclass(frozen=True)
class Gaussian:
    mean: float
    var: float
    clamped: bool = False


class _Cache(NamedTuple):
    acts: list[np.ndarray]      # trunk inputs per layer, then the representation
    outs: list[np.ndarray]      # raw head outputs, one [n, width] array per dimension


def _forward(theta: ParamVector, spec: PolicySpec, encodings) -> _Cache:
    h = np.atleast_2d(np.asarray(encodings, dtype=np.float64))
    if h.shape[1] != spec.input_dim:
        raise ValueError(f"encodings have width {h.shape[1]}, policy expects {spec.input_dim}")
    if spec.input_center is not None:
        h = h - np.asarray(spec.input_center)
    h = h * spec.input_scale
    acts = [h]
    for i in range(len(spec.hidden)):
        h = np.tanh(h @ theta[f"T{i}"] + theta[f"t{i}"])
        acts.append(h)
    outs = [h @ theta[f"H{j}"] + theta[f"h{j}"] for j in range(len(spec.space))]
    return _Cache(acts, outs)


def _log_softmax(x: np.ndarray) -> np.ndarray:
    s = x - x.max(axis=-1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def _gaussian(out_row: np.ndarray) -> Gaussian:
    mean, var_raw = float(out_row[0]), float(out_row[1])
    var = math.exp(min(var_raw, 700.0))
    clamped = not (VAR_MIN < var < VAR_MAX)
    return Gaussian(mean, min(max(var, VAR_MIN), VAR_MAX), clamped)


def _distributions(spec: PolicySpec, cache: _Cache) -> list[list[Categorical | Gaussian]]:
    n = cache.acts[0].shape[0]
    per_client: list[list] = [[] for _ in range(n)]
    for dim, out in zip(spec.space.dims, cache.outs):
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("policy produced non-finite outputs")
        if dim.is_discrete:
            logp = _log_softmax(out)
            for i in range(n):
                per_client[i].append(Categorical(np.exp(logp[i]), logp[i]))
        else:
            for i in range(n):
                per_client[i].append(_gaussian(out[i]))
    return per_client


def hpn_forward(theta: ParamVector, spec: PolicySpec, z) -> list[Categorical | Gaussian]:
    """Head distributions for one client encoding."""
    return _distributions(spec, _forward(theta, spec, z))[0]


def forward_batch(theta: ParamVector, spec: PolicySpec, encodings) -> list[list[Categorical | Gaussian]]:
    return _distributions(spec, _forward(theta, spec, encodings))


def sigmoid(g: float) -> float:
    if g >= 0:
        return 1.0 / (1.0 + math.exp(-g))
    e = math.exp(g)
    return e / (1.0 + e)


def gaussian_log_density(g: float, mean: float, var: float) -> float:
    return -0.5 * (LOG_2PI + math.log(var)) - (g - mean) ** 2 / (2.0 * var)


def sample_assignment(theta: ParamVector, spec: PolicySpec, encodings,
                      rng: np.random.Generator) -> PersonalizedAssignment:
    """Draw one configuration per client from its head distributions."""
    dists = forward_batch(theta, spec, encodings)
    samples = []
    for heads in dists:
        values, raw, log_prob = [], [], 0.0
        for dim, d in zip(spec.space.dims, heads):
            if isinstance(d, Categorical):
                k = int(np.searchsorted(np.cumsum(d.probs), rng.random(), side="right"))
                k = min(k, len(d.probs) - 1)
                values.append(k)
                raw.append(None)
                log_prob += float(d.log_probs[k])
            else:
                g0, _ = box_muller(1.0 - rng.random(), rng.random())
                g = d.mean + math.sqrt(d.var) * g0
                values.append(dim.from_unit(sigmoid(g)))
                raw.append(g)
                log_prob += gaussian_log_density(g, d.mean, d.var)
        samples.append(ConfigSample(tuple(values), log_prob, tuple(raw)))
    return PersonalizedAssignment(tuple(samples))


def argmax_assignment(theta: ParamVector, spec: PolicySpec, encodings) -> PersonalizedAssignment:
    """Most probable candidate per discrete head, squashed mean per continuous head."""
    samples = []
    for heads in forward_batch(theta, spec, encodings):
        values, raw, log_prob = [], [], 0.0
        for dim, d in zip(spec.space.dims, heads):
            if isinstance(d, Categorical):
                k = int(np.argmax(d.probs))
                values.append(k)
                raw.append(None)
                log_prob += float(d.log_probs[k])
            else:
                values.append(dim.from_unit(sigmoid(d.mean)))
                raw.append(d.mean)
                log_prob += gaussian_log_density(d.mean, d.mean, d.var)
        samples.append(ConfigSample(tuple(values), log_prob, tuple(raw)))
    return PersonalizedAssignment(tuple(samples))


def _backward(theta: ParamVector, spec: PolicySpec, cache: _Cache,
              head_grads: Sequence[np.ndarray]) -> ParamVector:
    """Chain per-head output gradients ([n, width] each) back to every parameter."""
    grads: dict[str, np.ndarray] = {}
    rep = cache.acts[-1]
    d_rep = np.zeros_like(rep)
    for j, g in enumerate(head_grads):
        grads[f"H{j}"] = rep.T @ g
        grads[f"h{j}"] = g.sum(axis=0)
        d_rep += g @ theta[f"H{j}"].T
    delta = d_rep
    for i in range(len(spec.hidden) - 1, -1, -1):
        dz = delta * (1.0 - cache.acts[i + 1] ** 2)
        grads[f"T{i}"] = cache.acts[i].T @ dz
        grads[f"t{i}"] = dz.sum(axis=0)
        delta = dz @ theta[f"T{i}"].T
    flat = np.concatenate([grads[s.name].ravel() for s in theta.layout])
    return theta.replace_values(flat)


def log_prob_and_grad(theta: ParamVector, spec: PolicySpec, encodings,
                      assignment: PersonalizedAssignment) -> tuple[float, ParamVector]:
    """``sum_i log P(c_i | h(z_i))`` and its gradient with respect to ``theta``."""
    cache = _forward(theta, spec, encodings)
    n = cache.acts[0].shape[0]
    if len(assignment) != n:
        raise ValueError(f"assignment has {len(assignment)} clients, encodings {n}")
    total = 0.0
    head_grads = []
    for j, (dim, out) in enumerate(zip(spec.space.dims, cache.outs)):
        g = np.zeros_like(out)
        if dim.is_discrete:
            logp = _log_softmax(out)
            for i in range(n):
                k = int(assignment[i].values[j])
                total += logp[i, k]
                g[i] = -np.exp(logp[i])
                g[i, k] += 1.0
        else:
            for i in range(n):
                raw = assignment[i].raw
                if raw is None or raw[j] is None:
                    raise ValueError(f"client {i}: continuous dimension {dim.name} lacks its raw draw")
                d = _gaussian(out[i])
                x = float(raw[j])
                total += gaussian_log_density(x, d.mean, d.var)
                g[i, 0] = (x - d.mean) / d.var
                g[i, 1] = 0.0 if d.clamped else -0.5 + (x - d.mean) ** 2 / (2.0 * d.var)
        head_grads.append(g)
    return float(total), _backward(theta, spec, cache, head_grads)


def entropy_and_grad(theta: ParamVector, spec: PolicySpec, encodings) -> tuple[float, ParamVector]:
    """Total entropy of all heads over all clients and its gradient."""
    cache = _forward(theta, spec, encodings)
    total = 0.0
    head_grads = []
    for dim, out in zip(spec.space.dims, cache.outs):
        g = np.zeros_like(out)
        if dim.is_discrete:
            logp = _log_softmax(out)
            p = np.exp(logp)
            ent = -(p * logp).sum(axis=1)
            total += float(ent.sum())
            g[:] = -p * (logp + ent[:, None])
        else:
            for i in range(out.shape[0]):
                d = _gaussian(out[i])
                total += 0.5 * (LOG_2PI + 1.0 + math.log(d.var))
                g[i, 1] = 0.0 if d.clamped else 0.5
        head_grads.append(g)
    return total, _backward(theta, spec, cache, head_grads)


@dataclass(frozen=True)
class TrainerConfig:
    policy_lr: float = 0.01
    baseline: str = "ema"
    ema_decay: float = 0.9
    entropy_coef: float = 0.0
    trials_per_update: int = 1
    hidden: tuple[int, ...] = (64, 64)
    seed: int = 0
    input_norm: str = "standardize"

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_norm not in ("none", "standardize"):
            raise ValueError("input_norm must be 'none' or 'standardize'")
        if not self.policy_lr > 0:
            raise ValueError("policy_lr must be > 0")
        if self.baseline not in ("none", "ema"):
            raise ValueError("baseline must be 'none' or 'ema'")
        if not 0 <= self.ema_decay < 1:
            raise ValueError("ema_decay must lie in [0, 1)")
        if self.entropy_coef < 0:
            raise ValueError("entropy_coef must be >= 0")
        if self.trials_per_update < 1:
            raise ValueError("trials_per_update must be >= 1")

    def paper_faithful(self) -> "TrainerConfig":
        """Plain REINFORCE: no reward baseline, no entropy bonus."""
        return replace(self, baseline="none", entropy_coef=0.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def input_normalization(encodings, mode: str = "standardize") -> tuple[tuple[float, ...] | None, float]:
    """Center and scale for the policy input.

    ``standardize`` subtracts the federation's mean encoding and divides by
    the root-mean-square of what remains, so clients differ at unit scale
    even when their raw encodings are tiny or nearly equal. Identical
    encodings keep scale 1.
    """
    z = np.atleast_2d(np.asarray(encodings, dtype=np.float64))
    if mode == "none":
        return None, 1.0
    if mode != "standardize":
        raise ValueError(f"unknown input normalization {mode!r}")
    center = z.mean(axis=0)
    rms = float(np.sqrt(np.mean((z - center) ** 2)))
    scale = 1.0 / rms if rms > 1e-12 else 1.0
    return tuple(center.tolist()), scale


class UpdateResult(NamedTuple):
    theta: ParamVector
    baseline: float
    accepted: bool
    advantages: tuple[float, ...]


def reinforce_update(
    theta: ParamVector,
    spec: PolicySpec,
    encodings,
    trials: Sequence[tuple[PersonalizedAssignment, float]],
    cfg: TrainerConfig,
    baseline: float = 0.0,
) -> UpdateResult:
    """One policy-gradient step.

    ``theta' = theta + lr * mean_t[(R_t - b) * grad log P(c_t)] + lr * entropy_coef * grad H``
    where ``b`` is the running EMA of rewards (or 0 without a baseline). The
    EMA absorbs each reward after it has been used. A step that would make
    any parameter non-finite is rejected and ``theta`` is returned as is.
    """
    if not trials:
        raise ValueError("need at least one trial")
    b = baseline if cfg.baseline == "ema" else 0.0
    step = np.zeros(len(theta))
    advantages = []
    for assignment, reward in trials:
        adv = float(reward) - b
        advantages.append(adv)
        if adv != 0.0:
            _, g = log_prob_and_grad(theta, spec, encodings, assignment)
            step += adv * g.values
    step /= len(trials)
    if cfg.entropy_coef > 0:
        _, h = entropy_and_grad(theta, spec, encodings)
        step += cfg.entropy_coef * h.values
    new_baseline = baseline
    if cfg.baseline == "ema":
        for _, reward in trials:
            new_baseline = cfg.ema_decay * new_baseline + (1.0 - cfg.ema_decay) * float(reward)
    with np.errstate(over="ignore", invalid="ignore"):
        new_values = theta.values + cfg.policy_lr * step
    if not np.all(np.isfinite(new_values)):
        return UpdateResult(theta, new_baseline, False, tuple(advantages))
    return UpdateResult(theta.replace_values(new_values), new_baseline, True, tuple(advantages))


def save_policy(directory: str | Path, theta: ParamVector, spec: PolicySpec, seed: int,
                extra: dict | None = None) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    bin_path, meta_path = directory / "policy.bin", directory / "policy.json"
    write_param_file(bin_path, theta.values)
    meta = {
        "input_dim": spec.input_dim,
        "hidden": list(spec.hidden),
        "input_scale": spec.input_scale,
        "input_center": None if spec.input_center is None else list(spec.input_center),
        "space": spec.space.to_dict(),
        "space_hash": spec.space_hash(),
        "seed": seed,
        **(extra or {}),
    }
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return [bin_path, meta_path]


def load_policy(directory: str | Path) -> tuple[ParamVector, PolicySpec, dict]:
    directory = Path(directory)
    meta_path = directory / "policy.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"policy not found: {meta_path}")
    meta = json.loads(meta_path.read_text())
    spec = PolicySpec(int(meta["input_dim"]), SearchSpace.from_dict(meta["space"]), tuple(meta["hidden"]),
                      float(meta.get("input_scale", 1.0)), meta.get("input_center"))
    if spec.space_hash() != meta["space_hash"]:
        raise ValueError("policy metadata space hash mismatch")
    theta = ParamVector(read_param_file(directory / "policy.bin"), spec.layout())
    return theta, spec, meta
