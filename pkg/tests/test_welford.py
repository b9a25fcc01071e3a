"""Streaming variance against two-pass oracles."""
import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from radfield import welford


def fresh(shape):
    return (np.zeros(shape, dtype=np.int64),
            np.zeros(shape, dtype=np.float64),
            np.zeros(shape, dtype=np.float64))


def feed(state, xs):
    n, mean, m2 = state
    for x in xs:
        welford.observe(n, mean, m2, x)
    return state


def test_constant_stream_has_zero_variance():
    state = feed(fresh(()), [0.5] * 20)
    assert welford.population_variance(state[0], state[2]) == 0.0
    assert state[1] == 0.5


def test_alternating_stream_hits_max_variance():
    # 0,1,0,1,... with even length: mean 1/2, population variance exactly 1/4
    state = feed(fresh(()), [0.0, 1.0] * 25)
    assert state[1] == 0.5
    assert welford.population_variance(state[0], state[2]) == 0.25


def test_streaming_matches_two_pass(rng):
    streams = 64
    length = 1000
    xs = rng.random((length, streams))
    n, mean, m2 = fresh(streams)
    for row in xs:
        welford.observe(n, mean, m2, row)
    expect_mean = xs.mean(axis=0)
    expect_var = xs.var(axis=0)  # population variance
    got_var = welford.population_variance(n, m2)
    np.testing.assert_allclose(mean, expect_mean, rtol=1e-12)
    np.testing.assert_allclose(got_var, expect_var, rtol=1e-12, atol=1e-15)


def test_merge_empty_is_identity(rng):
    state = feed(fresh(4), rng.random((17, 4)))
    before = tuple(a.copy() for a in state)
    empty = fresh(4)
    welford.merge_into(*state, *empty)
    for a, b in zip(state, before):
        np.testing.assert_array_equal(a, b)


def test_merge_into_empty_takes_other(rng):
    xs = rng.random((23, 4))
    state = feed(fresh(4), xs)
    target = fresh(4)
    welford.merge_into(*target, *state)
    np.testing.assert_array_equal(target[0], state[0])
    np.testing.assert_allclose(target[1], state[1], rtol=1e-15)
    np.testing.assert_allclose(target[2], state[2], rtol=1e-15)


@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 2 ** 32 - 1))
@settings(max_examples=60, deadline=None)
def test_merge_matches_sequential(na, nb, seed):
    rng = np.random.default_rng(seed)
    xs_a = rng.random((na, 3))
    xs_b = rng.random((nb, 3))
    a = feed(fresh(3), xs_a)
    b = feed(fresh(3), xs_b)
    welford.merge_into(*a, *b)
    whole = feed(fresh(3), np.concatenate([xs_a, xs_b]))
    np.testing.assert_array_equal(a[0], whole[0])
    np.testing.assert_allclose(a[1], whole[1], rtol=1e-10, atol=1e-15)
    np.testing.assert_allclose(a[2], whole[2], rtol=1e-10, atol=1e-13)


def test_merge_commutes(rng):
    xs_a = rng.random((31, 5))
    xs_b = rng.random((8, 5))
    ab = feed(fresh(5), xs_a)
    welford.merge_into(*ab, *feed(fresh(5), xs_b))
    ba = feed(fresh(5), xs_b)
    welford.merge_into(*ba, *feed(fresh(5), xs_a))
    np.testing.assert_array_equal(ab[0], ba[0])
    np.testing.assert_allclose(ab[1], ba[1], rtol=1e-12)
    np.testing.assert_allclose(ab[2], ba[2], rtol=1e-12, atol=1e-15)


def test_merge_associative(rng):
    chunks = [rng.random((k, 2)) for k in (9, 14, 5)]
    states = [feed(fresh(2), c) for c in chunks]

    left = tuple(a.copy() for a in states[0])
    welford.merge_into(*left, *tuple(a.copy() for a in states[1]))
    welford.merge_into(*left, *tuple(a.copy() for a in states[2]))

    bc = tuple(a.copy() for a in states[1])
    welford.merge_into(*bc, *tuple(a.copy() for a in states[2]))
    right = tuple(a.copy() for a in states[0])
    welford.merge_into(*right, *bc)

    np.testing.assert_array_equal(left[0], right[0])
    np.testing.assert_allclose(left[1], right[1], rtol=1e-10)
    np.testing.assert_allclose(left[2], right[2], rtol=1e-10, atol=1e-14)
