import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lpmtl.errors import InvalidExponent, ZeroVector
from lpmtl.norms import (
    INF,
    dual_exponent,
    holder_maximizer,
    lp_norm,
    parse_exponent,
    project_lr_ball,
    project_lr_ball_rows,
    project_simplex_rows,
)

from _oracles import random_ball_points


@pytest.mark.parametrize(
    "a, expected",
    [(1.0, INF), (INF, 1.0), (2.0, 2.0), (4.0 / 3.0, 4.0), (4.0, 4.0 / 3.0), (1.5, 3.0)],
)
def test_dual_exponent_values(a, expected):
    assert dual_exponent(a) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("a", [1.0, 1.5, 2.0, 4.0, INF])
def test_dual_exponent_involution(a):
    assert dual_exponent(dual_exponent(a)) == pytest.approx(a, rel=1e-12)


@pytest.mark.parametrize("bad", [0.5, 0.0, -1.0, float("nan")])
def test_dual_exponent_rejects_small(bad):
    with pytest.raises(InvalidExponent):
        dual_exponent(bad)


def test_parse_exponent_forms():
    assert parse_exponent("inf") == INF
    assert parse_exponent("+Infinity") == INF
    assert parse_exponent("4/3") == pytest.approx(4.0 / 3.0)
    assert parse_exponent(2) == 2.0
    with pytest.raises(InvalidExponent):
        parse_exponent("0.9")


def test_lp_norm_basic():
    v = np.array([3.0, -4.0])
    assert lp_norm(v, 2) == pytest.approx(5.0)
    assert lp_norm(v, 1) == 7.0
    assert lp_norm(v, INF) == 4.0
    assert lp_norm(np.zeros(3), 3) == 0.0
    # large p does not overflow
    assert lp_norm(np.array([1e300, 1e300]), 50) == pytest.approx(1e300 * 2 ** (1 / 50))


def test_holder_examples():
    np.testing.assert_allclose(holder_maximizer([3.0, 4.0], 2.0), [0.6, 0.8], rtol=0, atol=1e-15)
    np.testing.assert_array_equal(holder_maximizer([1.0, 5.0, 5.0], 1.0), [0.0, 1.0, 0.0])
    np.testing.assert_array_equal(holder_maximizer([1.0, 0.0], INF), [1.0, 1.0])


def test_holder_rejects_zero_and_negative():
    with pytest.raises(ZeroVector):
        holder_maximizer([0.0, 0.0], 2.0)
    with pytest.raises(ValueError):
        holder_maximizer([1.0, -1.0], 2.0)


nonneg = arrays(np.float64, st.integers(1, 6), elements=st.floats(0.0, 100.0)).filter(lambda g: g.max() > 1e-6)


@settings(max_examples=200, deadline=None)
@given(g=nonneg, q=st.sampled_from([1.0, 1.5, 2.0, 3.0, INF]))
def test_holder_tightness(g, q):
    x = holder_maximizer(g, q)
    assert np.all(x >= 0)
    assert lp_norm(x, q) <= 1.0 + 1e-12
    assert g @ x == pytest.approx(lp_norm(g, dual_exponent(q)), rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("q", [1.0, 1.5, 2.0, 3.0, INF])
def test_holder_beats_random_feasible(q):
    rng = np.random.default_rng(11)
    for _ in range(20):
        g = rng.random(4) * 10
        best = g @ holder_maximizer(g, q)
        pts = random_ball_points(rng, 4, q if not math.isinf(q) else 50.0, 2000)
        if math.isinf(q):
            pts = rng.random((2000, 4))
        assert np.all(pts @ g <= best + 1e-12)


def test_simplex_projection_known_values():
    out = project_simplex_rows(np.array([[0.5, 0.5, 0.5], [2.0, 0.0, 0.0], [0.2, 0.3, -1.0]]))
    np.testing.assert_allclose(out, [[1 / 3, 1 / 3, 1 / 3], [1.0, 0.0, 0.0], [0.45, 0.55, 0.0]], atol=1e-15)


@pytest.mark.parametrize("r", [1.0, 2.0, 3.0])
def test_projection_optimality(r):
    rng = np.random.default_rng(int(r * 10))
    for _ in range(5):
        v = rng.standard_normal(3) * 2
        p = project_lr_ball(v, r)
        assert np.all(p >= 0)
        assert lp_norm(p, r) <= 1.0 + 1e-9
        others = random_ball_points(rng, 3, r, 10_000)
        assert np.all(np.linalg.norm(others - v, axis=1) >= np.linalg.norm(p - v) - 1e-9)


def test_projection_inside_is_identity_and_inf_clips():
    v = np.array([0.1, 0.2])
    np.testing.assert_array_equal(project_lr_ball(v, 3.0), v)
    np.testing.assert_array_equal(project_lr_ball(np.array([2.0, 0.5, -1.0]), INF), [1.0, 0.5, 0.0])


@settings(max_examples=100, deadline=None)
@given(
    V=arrays(np.float64, (3, 4), elements=st.floats(-5.0, 5.0)),
    r=st.sampled_from([1.0, 1.5, 2.0, 3.0, 5.0]),
)
def test_projection_feasible_and_idempotent(V, r):
    P = project_lr_ball_rows(V, r)
    assert np.all(P >= 0)
    norms = np.sum(P**r, axis=1) ** (1.0 / r)
    assert np.all(norms <= 1.0 + 1e-9)
    np.testing.assert_allclose(project_lr_ball_rows(P, r), P, atol=1e-8)
