import numpy as np
from hypothesis import given, strategies as st

from pfedhpo.seeding import derive_int, derive_rng, label_key


def test_same_inputs_same_stream():
    a = derive_rng(3, "trial", 7).random(5)
    b = derive_rng(3, "trial", 7).random(5)
    assert np.array_equal(a, b)


@given(st.integers(0, 2**32), st.integers(0, 1000), st.integers(0, 1000))
def test_index_changes_stream(seed, i, j):
    if i == j:
        return
    assert derive_int(seed, "x", i) != derive_int(seed, "x", j)


def test_labels_used_by_the_package_do_not_collide():
    labels = ["model-init", "pretrain", "trial", "eval", "rff", "policy-init", "rs_global",
              "rs_personalized", "cluster-client", "partition", "split", "base"]
    keys = [label_key(x) for x in labels]
    assert len(set(keys)) == len(keys)


def test_index_arity_matters():
    # (1,) and (1, 0) must not alias.
    assert derive_int(0, "a", 1) != derive_int(0, "a", 1, 0)
