"""Random-search baselines under the same round accounting as the policy trainer.

``rs_global`` searches one configuration shared by every client.
``rs_personalized`` searches joint per-client assignments, i.e. a random
subset of the product space. Both spend the budget evenly on truncated
courses from a fresh init and select by best-seen weighted validation
accuracy.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from pfedhpo.fl import DivergenceError, RoundStreams, run_course
from pfedhpo.problem import EvalReport, Problem, RoundBudget, evaluate_assignment
from pfedhpo.rst import TrialRecord
from pfedhpo.seeding import derive_rng
from pfedhpo.space import PersonalizedAssignment, iter_samples, uniform_sample

RS_GLOBAL = "rs_global"
RS_PERSONALIZED = "rs_personalized"


@dataclass(frozen=True)
class BaselineConfig:
    method: str = RS_GLOBAL
    num_candidates: int = 6
    rounds_per_candidate: int = 100
    subsample_size: int = 100
    seed: int = 0
    distinct: bool = False

    def __post_init__(self) -> None:
        if self.method not in (RS_GLOBAL, RS_PERSONALIZED):
            raise ValueError(f"unknown baseline method {self.method!r}")
        if self.num_candidates < 1 or self.subsample_size < 1 or self.rounds_per_candidate < 1:
            raise ValueError("candidate counts and rounds must be >= 1")

    @property
    def candidates(self) -> int:
        return self.num_candidates if self.method == RS_GLOBAL else self.subsample_size

    @property
    def rounds_needed(self) -> int:
        return self.candidates * self.rounds_per_candidate

    @classmethod
    def for_budget(cls, method: str, budget: int, num_candidates: int = 6, subsample_size: int = 100,
                   seed: int = 0, distinct: bool = False) -> "BaselineConfig":
        """Split ``budget`` evenly across the candidates."""
        k = num_candidates if method == RS_GLOBAL else subsample_size
        if budget < k:
            raise ValueError(f"budget infeasible: {budget} rounds for {k} candidates")
        return cls(method, num_candidates, budget // k, subsample_size, seed, distinct)


@dataclass
class BaselineResult:
    method: str
    winner: PersonalizedAssignment
    winner_index: int
    trials: list[TrialRecord]
    rounds_consumed: int
    report: EvalReport | None = None
    scores: list[float] = field(default_factory=list)


def draw_global_candidates(problem: Problem, cfg: BaselineConfig) -> list[PersonalizedAssignment]:
    rng = derive_rng(cfg.seed, RS_GLOBAL)
    n = len(problem.fed)
    if cfg.distinct:
        pool = list(iter_samples(problem.space))
        if cfg.num_candidates > len(pool):
            raise ValueError(f"cannot draw {cfg.num_candidates} distinct configs from {len(pool)}")
        picks = rng.choice(len(pool), size=cfg.num_candidates, replace=False)
        return [PersonalizedAssignment.uniform(pool[int(i)], n) for i in picks]
    return [PersonalizedAssignment.uniform(uniform_sample(problem.space, rng), n)
            for _ in range(cfg.num_candidates)]


def draw_joint_candidates(problem: Problem, cfg: BaselineConfig) -> list[PersonalizedAssignment]:
    """Each candidate is an independent uniform configuration per client."""
    rng = derive_rng(cfg.seed, RS_PERSONALIZED)
    n = len(problem.fed)
    return [PersonalizedAssignment(tuple(uniform_sample(problem.space, rng) for _ in range(n)))
            for _ in range(cfg.subsample_size)]


def _search(problem: Problem, cfg: BaselineConfig, candidates: list[PersonalizedAssignment],
            budget: RoundBudget | None, eval_rounds: int | None) -> BaselineResult:
    budget = budget or RoundBudget(cfg.rounds_needed)
    trials, scores = [], []
    for k, assignment in enumerate(candidates):
        t0 = time.perf_counter()
        budget.consume(cfg.rounds_per_candidate)
        try:
            course = run_course(problem.model, problem.fresh_init(cfg.seed), problem.fed,
                                problem.configs(assignment), cfg.rounds_per_candidate,
                                RoundStreams(cfg.seed, cfg.method, k), executor=problem.executor)
            score, failed = course.best_round("valid_accuracy")["valid_accuracy"], False
        except DivergenceError:
            score, failed = -np.inf, True
        scores.append(score)
        trials.append(TrialRecord(k, 0, assignment, problem.decoded(assignment),
                                  float(score) if not failed else float("nan"),
                                  cfg.rounds_per_candidate, failed=failed,
                                  wall_time=time.perf_counter() - t0))
    # Earliest candidate wins ties.
    best = int(np.argmax(scores))
    winner = candidates[best]
    report = evaluate_assignment(problem, winner, eval_rounds, cfg.seed) if eval_rounds else None
    return BaselineResult(cfg.method, winner, best, trials, budget.consumed, report, scores)


def rs_global(problem: Problem, cfg: BaselineConfig, budget: RoundBudget | None = None,
              eval_rounds: int | None = None) -> BaselineResult:
    if cfg.method != RS_GLOBAL:
        raise ValueError("config is not for rs_global")
    return _search(problem, cfg, draw_global_candidates(problem, cfg), budget, eval_rounds)


def rs_personalized(problem: Problem, cfg: BaselineConfig, budget: RoundBudget | None = None,
                    eval_rounds: int | None = None) -> BaselineResult:
    if cfg.method != RS_PERSONALIZED:
        raise ValueError("config is not for rs_personalized")
    return _search(problem, cfg, draw_joint_candidates(problem, cfg), budget, eval_rounds)
