"""A tuning problem (model, federation, search space) and full-fidelity evaluation."""

from __future__ import annotations

import json
import logging
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Sequence

from pfedhpo.datasets import Federation
from pfedhpo.fl import (
    LOGISTIC,
    LocalTrainConfig,
    ModelSpec,
    RoundStreams,
    evaluate,
    model_init,
    run_course,
)
from pfedhpo.space import PersonalizedAssignment, SearchSpace, decode

log = logging.getLogger(__name__)


class BudgetExceeded(RuntimeError):
    pass


class RoundBudget:
    """Counts communication rounds against a fixed allowance."""

    def __init__(self, total: int):
        if total < 0:
            raise ValueError("budget must be >= 0")
        self.total = total
        self.consumed = 0

    @property
    def remaining(self) -> int:
        return self.total - self.consumed

    def can_afford(self, rounds: int) -> bool:
        return self.consumed + rounds <= self.total

    def consume(self, rounds: int) -> None:
        if not self.can_afford(rounds):
            raise BudgetExceeded(f"need {rounds} rounds, {self.remaining} left of {self.total}")
        self.consumed += rounds


@dataclass
class Problem:
    """Everything a tuner needs to run FL courses.

    ``base_config`` supplies the local-training fields that the search space
    does not cover; sampled dimensions override them per client.
    """

    model: ModelSpec
    fed: Federation
    space: SearchSpace
    base_config: LocalTrainConfig = field(default_factory=LocalTrainConfig)
    executor: Executor | None = None
    _warned: bool = field(default=False, repr=False)

    def configs(self, assignment: PersonalizedAssignment) -> list[LocalTrainConfig]:
        if len(assignment) != len(self.fed):
            raise ValueError(f"assignment covers {len(assignment)} of {len(self.fed)} clients")
        out = [self.base_config.with_overrides(decode(self.space, s)) for s in assignment.per_client]
        if self.model.kind == LOGISTIC and "dropout" in self.space.names and not self._warned:
            log.info("dropout is searched but ignored by logistic regression")
            self._warned = True
        return out

    def decoded(self, assignment: PersonalizedAssignment) -> list[dict[str, float]]:
        return [decode(self.space, s) for s in assignment.per_client]

    def fresh_init(self, seed: int):
        return model_init(self.model, seed)


def decoded_json(decoded: Sequence[dict[str, float]]) -> str:
    return json.dumps([{k: float(v) for k, v in d.items()} for d in decoded], separators=(",", ":"))


@dataclass
class EvalReport:
    """Outcome of a full-fidelity course run with a fixed assignment.

    ``best_round`` is the round with the highest weighted validation
    accuracy (earliest on ties); test metrics are read at that round.
    """

    decoded: list[dict[str, float]]
    best_round: int
    weighted_test_accuracy: float
    per_client_accuracies: list[float]
    valid_accuracy: float
    final_valid_loss: float
    rounds: int
    history: list[dict]


def evaluate_assignment(problem: Problem, assignment: PersonalizedAssignment, rounds: int,
                        seed: int, label: str = "eval") -> EvalReport:
    """Train from a fresh init for ``rounds`` rounds and report best-seen results."""
    course = run_course(problem.model, problem.fresh_init(seed), problem.fed,
                        problem.configs(assignment), rounds, RoundStreams(seed, label),
                        capture=True, track=("valid", "test"), executor=problem.executor)
    best = course.best_round("valid_accuracy")
    test = evaluate(problem.model, course.store[best["round"]], problem.fed, "test")
    return EvalReport(
        decoded=problem.decoded(assignment),
        best_round=best["round"],
        weighted_test_accuracy=test.accuracy,
        per_client_accuracies=list(test.accuracies),
        valid_accuracy=best["valid_accuracy"],
        final_valid_loss=course.history[-1]["valid_loss"],
        rounds=rounds,
        history=course.history,
    )
