"""Brute-force per-group hyperparameter oracle.

Clients are partitioned into groups (e.g. the clusters of a cluster
federation). Every combination of one configuration per group is trained
with a full course from a fresh init, and the combination with the lowest
final weighted validation loss wins.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

from pfedhpo.fl import DivergenceError
from pfedhpo.problem import Problem, evaluate_assignment
from pfedhpo.space import ConfigSample, PersonalizedAssignment, iter_samples


@dataclass
class OracleResult:
    best: tuple[ConfigSample, ...]
    table: list[tuple[tuple[ConfigSample, ...], float, float]]

    def per_client(self, group_of: Sequence[int]) -> list[ConfigSample]:
        return [self.best[g] for g in group_of]


def grid_oracle(problem: Problem, group_of: Sequence[int], rounds: int, seed: int) -> OracleResult:
    """Exhaustive search over one configuration per group.

    ``table`` rows are ``(combo, final_valid_loss, weighted_test_accuracy)``;
    diverged combinations get an infinite loss.
    """
    groups = sorted(set(group_of))
    if groups != list(range(len(groups))):
        raise ValueError("group ids must be 0..G-1")
    configs = list(iter_samples(problem.space))
    table = []
    for combo in itertools.product(configs, repeat=len(groups)):
        assignment = PersonalizedAssignment(tuple(combo[g] for g in group_of))
        try:
            rep = evaluate_assignment(problem, assignment, rounds, seed)
            table.append((combo, rep.final_valid_loss, rep.weighted_test_accuracy))
        except DivergenceError:
            table.append((combo, float("inf"), 0.0))
    best = min(table, key=lambda row: row[1])[0]
    return OracleResult(best, table)
