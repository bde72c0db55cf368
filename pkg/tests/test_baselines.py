import numpy as np
import pytest
from scipy import stats

from pfedhpo.baselines import (
    RS_GLOBAL,
    RS_PERSONALIZED,
    BaselineConfig,
    draw_global_candidates,
    draw_joint_candidates,
    rs_global,
    rs_personalized,
)
from pfedhpo.datagen import PartitionSpec, make_dirichlet_federation
from pfedhpo.fl import LOGISTIC, LocalTrainConfig, ModelSpec
from pfedhpo.problem import BudgetExceeded, Problem, RoundBudget, evaluate_assignment
from pfedhpo.space import Dimension, PersonalizedAssignment, SearchSpace, iter_samples

TOY = SearchSpace((Dimension("lr", candidates=(1e-4, 1e-3, 1e-2, 1e-1)),))
SIXTEEN = SearchSpace((Dimension("lr", candidates=(0.01, 0.05, 0.1, 0.5)),
                       Dimension("local_steps", candidates=(1, 2, 3, 4))))


def make_problem(seed=0, space=TOY, n=4):
    fed = make_dirichlet_federation(3, 4, 150 * n, PartitionSpec(n, 1.0, 20, seed), separation=2.0)
    return Problem(ModelSpec(LOGISTIC, 4, 3), fed, space, LocalTrainConfig(local_steps=5))


def test_config_invariants_and_split():
    with pytest.raises(ValueError):
        BaselineConfig(num_candidates=0)
    with pytest.raises(ValueError):
        BaselineConfig(method="grid")
    cfg = BaselineConfig.for_budget(RS_GLOBAL, 600, num_candidates=6)
    assert cfg.rounds_per_candidate == 100 and cfg.rounds_needed == 600
    cfg = BaselineConfig.for_budget(RS_PERSONALIZED, 600, subsample_size=100)
    assert cfg.rounds_per_candidate == 6 and cfg.candidates == 100
    with pytest.raises(ValueError, match="budget infeasible"):
        BaselineConfig.for_budget(RS_PERSONALIZED, 50, subsample_size=100)


def test_one_combination_space_wins_trivially():
    one = SearchSpace((Dimension("lr", candidates=(0.1,)),))
    p = make_problem(space=one)
    res = rs_global(p, BaselineConfig(RS_GLOBAL, 3, 2))
    assert res.winner == PersonalizedAssignment.uniform(res.winner[0], 4)
    assert res.winner[0].values == (0,)


def test_single_draws_are_returned():
    p = make_problem()
    res = rs_global(p, BaselineConfig(RS_GLOBAL, 1, 3, seed=5))
    assert res.winner == draw_global_candidates(p, BaselineConfig(RS_GLOBAL, 1, 3, seed=5))[0]
    cfg = BaselineConfig(RS_PERSONALIZED, subsample_size=1, rounds_per_candidate=3, seed=5)
    res = rs_personalized(p, cfg)
    assert res.winner == draw_joint_candidates(p, cfg)[0] and len(res.trials) == 1


def test_global_candidates_share_one_config():
    p = make_problem(space=SIXTEEN)
    for a in draw_global_candidates(p, BaselineConfig(RS_GLOBAL, 10, 1)):
        assert len({s.values for s in a.per_client}) == 1


def test_n_equals_one_personalized_matches_global_distribution():
    p = make_problem(space=SIXTEEN, n=1)
    g = draw_global_candidates(p, BaselineConfig(RS_GLOBAL, 4000, 1, seed=1))
    j = draw_joint_candidates(p, BaselineConfig(RS_PERSONALIZED, subsample_size=4000, rounds_per_candidate=1, seed=2))
    cg = np.bincount([a[0].values[0] * 4 + a[0].values[1] for a in g], minlength=16)
    cj = np.bincount([a[0].values[0] * 4 + a[0].values[1] for a in j], minlength=16)
    assert stats.chi2_contingency(np.stack([cg, cj])).pvalue > 0.01


def test_distinct_draws_recover_exhaustive_oracle():
    matches = 0
    for seed in range(5):
        p = make_problem(seed)
        res = rs_global(p, BaselineConfig(RS_GLOBAL, 4, 40, seed=seed, distinct=True))
        assert sorted(a[0].values for a in draw_global_candidates(p, BaselineConfig(RS_GLOBAL, 4, 40, seed=seed,
                                                                                    distinct=True))) \
            == [(0,), (1,), (2,), (3,)]
        full = [evaluate_assignment(p, PersonalizedAssignment.uniform(c, 4), 40, seed).valid_accuracy
                for c in iter_samples(TOY)]
        matches += res.winner[0].values == (int(np.argmax(full)),)
    assert matches >= 4


def test_distinct_requires_enough_configs():
    with pytest.raises(ValueError):
        draw_global_candidates(make_problem(), BaselineConfig(RS_GLOBAL, 5, 1, distinct=True))


def test_joint_duplicate_rate():
    p = make_problem(space=SIXTEEN, n=5)
    dup = []
    for seed in range(50):
        draws = draw_joint_candidates(p, BaselineConfig(RS_PERSONALIZED, subsample_size=100,
                                                        rounds_per_candidate=1, seed=seed))
        keys = [tuple(s.values for s in a.per_client) for a in draws]
        dup.append(1 - len(set(keys)) / len(keys))
    assert np.mean(dup) < 0.01


@pytest.mark.parametrize("method", [RS_GLOBAL, RS_PERSONALIZED])
def test_marginal_uniformity(method):
    p = make_problem(space=SIXTEEN, n=1)
    if method == RS_GLOBAL:
        draws = draw_global_candidates(p, BaselineConfig(RS_GLOBAL, 10_000, 1))
    else:
        draws = draw_joint_candidates(p, BaselineConfig(RS_PERSONALIZED, subsample_size=10_000, rounds_per_candidate=1))
    for d in range(2):
        counts = np.bincount([a[0].values[d] for a in draws], minlength=4)
        assert stats.chisquare(counts).pvalue > 0.01


def test_budget_accounting_and_report():
    p = make_problem()
    budget = RoundBudget(600)
    cfg = BaselineConfig.for_budget(RS_PERSONALIZED, 600, subsample_size=100)
    res = rs_personalized(p, cfg, budget, eval_rounds=5)
    assert res.rounds_consumed == budget.consumed == 600
    assert len(res.trials) == 100 and all(t.rounds_consumed == 6 for t in res.trials)
    assert res.report.rounds == 5
    assert res.winner_index == int(np.argmax(res.scores))
    with pytest.raises(BudgetExceeded):
        rs_global(p, BaselineConfig(RS_GLOBAL, 3, 10), RoundBudget(20))


def test_deterministic():
    p = make_problem()
    cfg = BaselineConfig(RS_GLOBAL, 3, 5, seed=4)
    a, b = rs_global(p, cfg, eval_rounds=5), rs_global(p, cfg, eval_rounds=5)
    assert a.scores == b.scores and a.winner == b.winner and a.report == b.report
