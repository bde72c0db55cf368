"""Random start training (RST) and the policy training loop.

A hand-configured FL course is run once and every round's global model is
kept. Each trial then samples per-client configurations from the policy,
restarts from a uniformly drawn checkpoint ``s``, runs ``T_s`` rounds and
rewards the validation gain over the saved model at round ``s + T_s``
(clamped to ``T``).
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from pfedhpo.fl import (
    CheckpointStore,
    DivergenceError,
    LocalTrainConfig,
    RoundStreams,
    evaluate,
    run_course,
)
from pfedhpo.policy import (
    PolicySpec,
    TrainerConfig,
    argmax_assignment,
    init_policy,
    input_normalization,
    reinforce_update,
    sample_assignment,
)
from pfedhpo.problem import EvalReport, Problem, RoundBudget, evaluate_assignment
from pfedhpo.seeding import derive_rng
from pfedhpo.space import PersonalizedAssignment

log = logging.getLogger(__name__)

NEG_LOSS_GAIN = "neg_loss_gain"
ACCURACY_GAIN = "accuracy_gain"
# Reward given to a diverged trial before any reward has been observed.
INITIAL_WORST_REWARD = -1.0


@dataclass(frozen=True)
class RstConfig:
    T: int = 50
    T_s: int = 1
    budget: int = 600
    default_config: LocalTrainConfig = field(default_factory=LocalTrainConfig)
    reward_metric: str = NEG_LOSS_GAIN
    seed: int = 0

    def __post_init__(self) -> None:
        if not 1 <= self.T_s <= self.T:
            raise ValueError(f"need 1 <= T_s <= T, got T_s={self.T_s}, T={self.T}")
        if self.reward_metric not in (NEG_LOSS_GAIN, ACCURACY_GAIN):
            raise ValueError(f"unknown reward metric {self.reward_metric!r}")

    def check_budget(self) -> None:
        if self.budget < self.T + self.T_s:
            raise ValueError(f"budget infeasible: {self.budget} rounds < T + T_s = {self.T + self.T_s}")


@dataclass
class TrialRecord:
    trial_id: int
    start_round: int
    assignment: PersonalizedAssignment
    decoded: list[dict[str, float]]
    reward: float
    rounds_consumed: int
    reference_round: int = 0
    failed: bool = False
    valid_before: list[float] = field(default_factory=list)
    valid_after: list[float] = field(default_factory=list)
    wall_time: float = 0.0


def validation_metric(problem: Problem, w, metric: str):
    """Scalar to maximize plus the per-client values it aggregates."""
    res = evaluate(problem.model, w, problem.fed, "valid")
    if metric == NEG_LOSS_GAIN:
        return -res.loss, list(res.losses)
    return res.accuracy, list(res.accuracies)


def sample_start_round(T: int, rng: np.random.Generator) -> int:
    """Uniform integer on {1, ..., T}."""
    if T < 1:
        raise ValueError("T must be >= 1")
    return int(rng.integers(1, T + 1))


def pretrain_streams(seed: int) -> RoundStreams:
    return RoundStreams(seed, "pretrain")


def rst_pretrain(problem: Problem, cfg: RstConfig, budget: RoundBudget | None = None):
    """Train the reference course with ``cfg.default_config`` and keep every round.

    Returns ``(store, history)``; ``history`` holds per-round weighted
    validation metrics.
    """
    if budget is not None:
        budget.consume(cfg.T)
    configs = [cfg.default_config] * len(problem.fed)
    meta = {"seed": cfg.seed, "default_config": cfg.default_config.to_dict(),
            "model_id": problem.model.model_id}
    course = run_course(problem.model, problem.fresh_init(cfg.seed), problem.fed, configs, cfg.T,
                        pretrain_streams(cfg.seed), capture=True, executor=problem.executor,
                        metadata=meta)
    return course.store, course.history


class ReferenceMetrics:
    """Memoized validation metric of each checkpoint."""

    def __init__(self, problem: Problem, store: CheckpointStore, metric: str):
        self.problem, self.store, self.metric = problem, store, metric
        self._cache: dict[int, tuple[float, list[float]]] = {}

    def __call__(self, round_index: int) -> tuple[float, list[float]]:
        if round_index not in self._cache:
            self._cache[round_index] = validation_metric(self.problem, self.store[round_index], self.metric)
        return self._cache[round_index]


def rst_trial(
    problem: Problem,
    store: CheckpointStore,
    cfg: RstConfig,
    trial_id: int,
    theta=None,
    policy_spec: PolicySpec | None = None,
    assignment: PersonalizedAssignment | None = None,
    start_round: int | None = None,
    streams: Callable | None = None,
    worst_reward: float | None = None,
    reference: ReferenceMetrics | None = None,
) -> TrialRecord:
    """One RST evaluation.

    The trial stream ``(seed, "trial", trial_id)`` first draws the
    assignment (unless given) and then the start round (unless given).
    Local training uses ``streams`` (default: per-trial streams). A
    diverged trial gets ``worst_reward``.
    """
    t0 = time.perf_counter()
    T = store.last_round
    rng = derive_rng(cfg.seed, "trial", trial_id)
    if assignment is None:
        if theta is None or policy_spec is None:
            raise ValueError("need theta and policy_spec to sample an assignment")
        assignment = sample_assignment(theta, policy_spec, problem.fed.encodings, rng)
    s = sample_start_round(T, rng) if start_round is None else int(start_round)
    if not 1 <= s <= T:
        raise ValueError(f"start round {s} outside [1, {T}]")
    ref_round = min(s + cfg.T_s, T)
    if s + cfg.T_s > T:
        log.debug("trial %d: reference clamped to round %d", trial_id, T)
    reference = reference or ReferenceMetrics(problem, store, cfg.reward_metric)
    ref_value, ref_clients = reference(ref_round)
    streams = streams or RoundStreams(cfg.seed, "trial", trial_id)
    decoded = problem.decoded(assignment)
    try:
        course = run_course(problem.model, store[s], problem.fed, problem.configs(assignment), cfg.T_s,
                            streams, start_round=s, track=(), executor=problem.executor)
        new_value, new_clients = validation_metric(problem, course.final, cfg.reward_metric)
        if not math.isfinite(new_value):
            raise DivergenceError("non-finite validation metric")
        reward, failed = new_value - ref_value, False
    except DivergenceError as exc:
        log.warning("trial %d diverged: %s", trial_id, exc)
        reward = INITIAL_WORST_REWARD if worst_reward is None else worst_reward
        new_clients, failed = [], True
    return TrialRecord(trial_id, s, assignment, decoded, float(reward), cfg.T_s, ref_round, failed,
                       ref_clients, new_clients, time.perf_counter() - t0)


def full_fidelity_trial(problem: Problem, cfg: RstConfig, trial_id: int, theta, policy_spec: PolicySpec,
                        rounds: int, worst_reward: float | None = None) -> TrialRecord:
    """Evaluate a sampled assignment with a whole course from a fresh init.

    The reward is the negative weighted validation loss of the final model.
    """
    t0 = time.perf_counter()
    rng = derive_rng(cfg.seed, "trial", trial_id)
    assignment = sample_assignment(theta, policy_spec, problem.fed.encodings, rng)
    decoded = problem.decoded(assignment)
    try:
        course = run_course(problem.model, problem.fresh_init(cfg.seed), problem.fed,
                            problem.configs(assignment), rounds, RoundStreams(cfg.seed, "trial", trial_id),
                            track=(), executor=problem.executor)
        res = evaluate(problem.model, course.final, problem.fed, "valid")
        reward, after, failed = -res.loss, list(res.losses), False
    except DivergenceError as exc:
        log.warning("full-fidelity trial %d diverged: %s", trial_id, exc)
        reward = INITIAL_WORST_REWARD if worst_reward is None else worst_reward
        after, failed = [], True
    return TrialRecord(trial_id, 0, assignment, decoded, float(reward), rounds, 0, failed, [], after,
                       time.perf_counter() - t0)


@dataclass
class HpnResult:
    theta: object
    policy_spec: PolicySpec
    trials: list[TrialRecord]
    trace: list[tuple[int, int, str, float]]
    rounds_consumed: int
    pretrain_rounds: int
    updates: int
    rejected_updates: int = 0
    pretrain_history: list[dict] = field(default_factory=list)

    def argmax_changes(self) -> list[int]:
        return argmax_change_counts(self.trace)


def argmax_snapshot(theta, policy_spec: PolicySpec, encodings) -> list[list[float]]:
    """Per client, per head: argmax candidate index (discrete) or mapped mean (continuous)."""
    assignment = argmax_assignment(theta, policy_spec, encodings)
    return [list(s.values) for s in assignment.per_client]


def argmax_change_counts(trace: Sequence[tuple[int, int, str, float]]) -> list[int]:
    """For each update after the first, how many (client, head) argmaxes changed."""
    by_update: dict[int, dict[tuple[int, str], float]] = {}
    for update, client, head, value in trace:
        by_update.setdefault(update, {})[(client, head)] = value
    keys = sorted(by_update)
    return [sum(by_update[b].get(k) != v for k, v in by_update[a].items())
            for a, b in zip(keys, keys[1:])]


def quartile_change_counts(changes: Sequence[int]) -> tuple[int, int]:
    """Total argmax changes in the first and in the last quarter of the updates."""
    q = max(1, len(changes) // 4)
    return int(sum(changes[:q])), int(sum(changes[-q:]))


def train_hpn(
    problem: Problem,
    rst_cfg: RstConfig,
    trainer_cfg: TrainerConfig,
    store: CheckpointStore | None = None,
    mode: str = "rst",
    full_rounds: int | None = None,
    on_trial: Callable[[TrialRecord], None] | None = None,
) -> HpnResult:
    """Alternate trials and policy updates until the round budget is spent.

    In ``rst`` mode the pretraining course is charged to the budget whether
    it is run here or ``store`` is supplied. In ``full`` mode every trial is
    a complete course of ``full_rounds`` (default ``T``) rounds.
    """
    if mode not in ("rst", "full"):
        raise ValueError(f"unknown mode {mode!r}")
    encodings = np.asarray(problem.fed.encodings)
    center, scale = input_normalization(encodings, trainer_cfg.input_norm)
    policy_spec = PolicySpec(encodings.shape[1], problem.space, trainer_cfg.hidden, scale, center)
    theta = init_policy(policy_spec, derive_rng(trainer_cfg.seed, "policy-init"))
    budget = RoundBudget(rst_cfg.budget)
    pretrain_history: list[dict] = []
    reference = None
    if mode == "rst":
        rst_cfg.check_budget()
        if store is None:
            store, pretrain_history = rst_pretrain(problem, rst_cfg, budget)
        else:
            if store.last_round != rst_cfg.T:
                raise ValueError(f"checkpoint store has {store.last_round} rounds, config says T={rst_cfg.T}")
            budget.consume(rst_cfg.T)
        reference = ReferenceMetrics(problem, store, rst_cfg.reward_metric)
        cost = rst_cfg.T_s
    else:
        cost = full_rounds or rst_cfg.T
        if rst_cfg.budget < cost:
            raise ValueError(f"budget infeasible: {rst_cfg.budget} rounds < one course of {cost}")
    pretrain_rounds = budget.consumed

    trials: list[TrialRecord] = []
    trace: list[tuple[int, int, str, float]] = []
    baseline = 0.0
    worst: float | None = None
    updates = rejected = 0
    names = problem.space.names
    while budget.can_afford(cost):
        batch = []
        while len(batch) < trainer_cfg.trials_per_update and budget.can_afford(cost):
            tid = len(trials)
            if mode == "rst":
                rec = rst_trial(problem, store, rst_cfg, tid, theta, policy_spec,
                                worst_reward=worst, reference=reference)
            else:
                rec = full_fidelity_trial(problem, rst_cfg, tid, theta, policy_spec, cost, worst)
            budget.consume(rec.rounds_consumed)
            if not rec.failed:
                worst = rec.reward if worst is None else min(worst, rec.reward)
            trials.append(rec)
            batch.append((rec.assignment, rec.reward))
            if on_trial is not None:
                on_trial(rec)
        result = reinforce_update(theta, policy_spec, encodings, batch, trainer_cfg, baseline)
        theta, baseline = result.theta, result.baseline
        if not result.accepted:
            rejected += 1
            log.warning("update %d rejected: non-finite parameters", updates)
        updates += 1
        for client, values in enumerate(argmax_snapshot(theta, policy_spec, encodings)):
            for head, v in zip(names, values):
                trace.append((updates, client, head, float(v)))
    return HpnResult(theta, policy_spec, trials, trace, budget.consumed, pretrain_rounds, updates,
                     rejected, pretrain_history)


def deploy_and_evaluate(problem: Problem, theta, policy_spec: PolicySpec, eval_rounds: int,
                        seed: int) -> EvalReport:
    """Give every client its most probable configuration and run a fresh full course."""
    assignment = argmax_assignment(theta, policy_spec, problem.fed.encodings)
    return evaluate_assignment(problem, assignment, eval_rounds, seed)

