import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from pfedhpo.space import (
    CONTINUOUS,
    LOG,
    ConfigSample,
    Dimension,
    SearchSpace,
    SpaceError,
    decode,
    encode_values,
    iter_samples,
    parse,
    personalized_space_size,
    render,
    space_size,
    uniform_sample,
    validate_sample,
)

CIFAR_LR = (1e-3, 5e-3, 1e-2, 5e-2, 1e-1)
STEPS = (1, 2, 3, 4)


def graph_space():
    # 4 learning rates x 4 local step counts: 16 combinations.
    return SearchSpace((Dimension("lr", candidates=(0.01, 0.05, 0.1, 0.5)),
                        Dimension("local_steps", candidates=STEPS)))


def test_space_size_sixteen():
    assert space_size(graph_space()) == 16


def test_personalized_size_five_clients():
    assert personalized_space_size(graph_space(), 5) == 1_048_576


def test_personalized_size_two_by_ten():
    assert personalized_space_size(SearchSpace((Dimension("a", candidates=(0, 1)),)), 10) == 1024


def test_single_candidate_and_continuous_sizes():
    one = SearchSpace((Dimension("a", candidates=(3.0,)),))
    assert space_size(one) == 1
    assert decode(one, ConfigSample((0,))) == {"a": 3.0}
    cont = SearchSpace((Dimension("a", candidates=(1, 2)), Dimension("b", CONTINUOUS, lo=0, hi=1)))
    assert space_size(cont) == math.inf
    assert personalized_space_size(cont, 3) == math.inf


def test_huge_personalized_size_is_infinite():
    assert personalized_space_size(graph_space(), 10**6) == math.inf


def test_decode_examples():
    lr = SearchSpace((Dimension("lr", candidates=CIFAR_LR),))
    assert decode(lr, ConfigSample((2,))) == {"lr": 1e-2}
    steps = SearchSpace((Dimension("local_steps", candidates=STEPS),))
    assert decode(steps, ConfigSample((3,))) == {"local_steps": 4}


@pytest.mark.parametrize("kwargs", [
    dict(name="a", candidates=()),
    dict(name="a", candidates=(1, 1)),
    dict(name="a", candidates=(2, 1)),
    dict(name="a", candidates=(1, float("nan"))),
    dict(name="a", kind=CONTINUOUS, lo=1, hi=1),
    dict(name="a", kind=CONTINUOUS, lo=0, hi=1, scale=LOG),
    dict(name="a", kind="ordinal", candidates=(1,)),
    dict(name="", candidates=(1,)),
])
def test_dimension_invariants(kwargs):
    with pytest.raises(SpaceError):
        Dimension(**kwargs)


def test_duplicate_names_rejected():
    with pytest.raises(SpaceError):
        SearchSpace((Dimension("a", candidates=(1,)), Dimension("a", candidates=(2,))))


def test_validate_sample_bounds():
    space = SearchSpace((Dimension("a", candidates=(1, 2)), Dimension("b", CONTINUOUS, lo=0, hi=1)))
    validate_sample(space, ConfigSample((1, 0.5)))
    for bad in [(2, 0.5), (0, 1.5), (0,), (0.5, 0.5)]:
        with pytest.raises(SpaceError):
            validate_sample(space, ConfigSample(bad))


def test_log_scale_mapping():
    dim = Dimension("lr", CONTINUOUS, lo=1e-4, hi=1e-1, scale=LOG)
    assert dim.from_unit(0.0) == pytest.approx(1e-4)
    assert dim.from_unit(1.0) == pytest.approx(1e-1)
    assert dim.from_unit(0.5) == pytest.approx(math.sqrt(1e-4 * 1e-1))


small_spaces = st.lists(st.integers(1, 4), min_size=1, max_size=3).map(
    lambda sizes: SearchSpace(tuple(Dimension(f"d{i}", candidates=tuple(range(k)))
                                    for i, k in enumerate(sizes))))


@given(small_spaces)
def test_decode_is_a_bijection(space):
    seen = set()
    for sample in iter_samples(space):
        values = decode(space, sample)
        assert encode_values(space, values) == ConfigSample(sample.values)
        seen.add(tuple(values.values()))
    assert len(seen) == space_size(space)


@given(small_spaces, st.integers(1, 4))
def test_personalized_size_is_power(space, n):
    assert personalized_space_size(space, n) == space_size(space) ** n


dims = st.one_of(
    st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=5, unique=True).map(
        lambda c: ("discrete", tuple(sorted(c)))),
    st.tuples(st.floats(1e-6, 10), st.floats(1e-3, 10), st.sampled_from(["linear", "log"])).map(
        lambda t: ("continuous", t)),
)


@given(st.lists(dims, min_size=1, max_size=4))
def test_render_parse_round_trip(blocks):
    out = []
    for i, (kind, payload) in enumerate(blocks):
        if kind == "discrete":
            out.append(Dimension(f"d{i}", candidates=payload))
        else:
            lo, width, scale = payload
            out.append(Dimension(f"d{i}", CONTINUOUS, lo=lo, hi=lo + width, scale=scale))
    space = SearchSpace(tuple(out))
    assert parse(render(space)) == space


def test_parse_reports_missing_field():
    with pytest.raises(SpaceError, match=r"dims\[0\].*candidates"):
        parse("dims:\n- name: lr\n")


def test_uniform_sample_log_prob_and_marginals():
    space = graph_space()
    rng = np.random.default_rng(0)
    counts = np.zeros((2, 4))
    for _ in range(10_000):
        s = uniform_sample(space, rng)
        assert s.log_prob == pytest.approx(-math.log(16))
        assert s.log_prob <= 0
        for d, v in enumerate(s.values):
            counts[d, v] += 1
    for row in counts:
        assert stats.chisquare(row).pvalue > 0.01
