import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lpmtl.data import synth_multitask
from lpmtl.errors import InvalidDataset, NumericError, UnsupportedExponent
from lpmtl.kernels import KernelSpec, build_gram, stack_from_matrices
from lpmtl.mtl import train
from lpmtl.norms import INF, dual_exponent
from lpmtl.rademacher import (
    ASSUMPTION_VIOLATED,
    ErcParams,
    empirical_ramp_error,
    erc_bound,
    erc_multi_kernel,
    erc_single_kernel,
    generalization_bound,
    maximize_kernel_weights,
    multi_kernel_values,
    ramp_loss,
    sample_sigma,
    sigma_quadratic_forms,
    single_kernel_values,
)

S_GRID = [1.0, 4.0 / 3.0, 2.0, 4.0, 100.0, INF]


def identity_stack(T=2, N=4, M=1):
    return stack_from_matrices([[np.eye(N)] * M for _ in range(T)])


@pytest.fixture(scope="module")
def gauss_gram():
    data = synth_multitask(3, 20, 4, 0.5, 0.1, seed=12)
    return build_gram(data, [KernelSpec.gaussian(1.0)])


def test_sigma_is_deterministic_and_keyed():
    a = sample_sigma([5, 7], seed=3, sample_index=2)
    b = sample_sigma([5, 7], seed=3, sample_index=2)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    assert set(np.concatenate(a)) <= {-1.0, 1.0}
    # a task's stream does not depend on the other tasks
    np.testing.assert_array_equal(sample_sigma([5], 3, 2)[0], a[0])
    c = sample_sigma([64], seed=3, sample_index=3)[0]
    assert not np.array_equal(c, sample_sigma([64], seed=3, sample_index=2)[0])
    assert not np.array_equal(c, sample_sigma([64], seed=4, sample_index=3)[0])


def test_sigma_mean_is_near_zero():
    v = sample_sigma([100_000], seed=0, sample_index=0)[0]
    assert abs(v.mean()) < 0.02
    bits = np.concatenate([sample_sigma([50], 1, d)[0] for d in range(400)])
    assert abs(bits.mean()) < 0.02


@pytest.mark.parametrize("s, expected", [(1.0, 0.5), (2.0, 0.7071067811865476), (INF, 1.0)])
def test_identity_closed_forms(s, expected):
    rep = erc_single_kernel(identity_stack(), ErcParams(s, num_samples=25, seed=1))
    assert rep.estimate == pytest.approx(expected, abs=1e-12)
    assert rep.std_error == 0.0
    # closed form (2 sqrt(R) / (T N)) T^(1/s*) sqrt(N)
    assert rep.estimate == pytest.approx(2 / 8 * 2 ** (1 / dual_exponent(s)) * 2, abs=1e-12)


def test_per_sample_monotone_in_s(gauss_gram):
    U = sigma_quadratic_forms(gauss_gram, seed=5, num_samples=300)
    vals = np.array([single_kernel_values(U, s) for s in S_GRID])
    assert np.all(np.diff(vals, axis=0) >= -1e-12)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (4, 3, 1), elements=st.floats(0.0, 50.0)))
def test_single_kernel_values_monotone_for_any_forms(U):
    vals = np.array([single_kernel_values(U, s) for s in S_GRID])
    assert np.all(np.diff(vals, axis=0) >= -1e-9 * (1.0 + np.abs(vals[1:])))


def test_equal_radius_limit(gauss_gram):
    U = sigma_quadratic_forms(gauss_gram, seed=5, num_samples=100)
    np.testing.assert_allclose(single_kernel_values(U, INF), np.sqrt(U[:, :, 0]).sum(axis=1), atol=1e-10)


def test_forms_match_explicit_sigma(gauss_gram):
    U = sigma_quadratic_forms(gauss_gram, seed=8, num_samples=3)
    for d in range(3):
        sig = sample_sigma(gauss_gram.task_sizes, 8, d)
        for t in range(gauss_gram.num_tasks):
            assert U[d, t, 0] == pytest.approx(sig[t] @ gauss_gram.mats[t][0] @ sig[t], rel=1e-12)


def test_worker_count_does_not_change_forms(gauss_gram):
    a = sigma_quadratic_forms(gauss_gram, seed=2, num_samples=1500, workers=1)
    b = sigma_quadratic_forms(gauss_gram, seed=2, num_samples=1500, workers=4)
    np.testing.assert_array_equal(a, b)


def test_unequal_sizes_rejected():
    g = stack_from_matrices([np.eye(3), np.eye(4)])
    with pytest.raises(InvalidDataset):
        erc_single_kernel(g, ErcParams(1.0, num_samples=2))


def test_non_psd_detected():
    bad = -np.eye(4)
    from lpmtl.kernels import GramStack

    g = GramStack(((bad,), (bad,)), (4, 4))
    with pytest.raises(NumericError):
        sigma_quadratic_forms(g, 0, 3)


def test_multi_kernel_identity_closed_form():
    rep = erc_multi_kernel(identity_stack(M=3), ErcParams(2.0, r=1.0, num_samples=10))
    assert rep.estimate == pytest.approx(0.7071067811865476, abs=1e-12)
    assert rep.std_error == 0.0


@pytest.mark.parametrize("s", [2.0, 4.0, 100.0, INF])
def test_multi_kernel_with_one_kernel_equals_single(gauss_gram, s):
    U = sigma_quadratic_forms(gauss_gram, seed=4, num_samples=200)
    multi, ok = multi_kernel_values(U, s, 1.0)
    assert ok.all()
    np.testing.assert_allclose(multi, single_kernel_values(U, s), rtol=1e-9)


def test_multi_kernel_grid_oracle():
    K1 = np.array([[1.0, 0.3], [0.3, 0.5]])
    K2 = np.array([[0.4, -0.2], [-0.2, 0.9]])
    g = stack_from_matrices([[K1, K2]])
    U = sigma_quadratic_forms(g, seed=0, num_samples=4)
    vals, ok = multi_kernel_values(U, 2.0, 2.0)
    angles = np.linspace(0.0, np.pi / 2, 1571)
    thetas = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    for d in range(4):
        best = np.max(thetas @ U[d, 0]) ** 0.5
        assert vals[d] == pytest.approx(best, abs=1e-5)


@pytest.mark.parametrize("s, r", [(4.0, 1.0), (4.0, 3.0), (INF, 2.0)])
def test_projected_ascent_beats_random_feasible_points(s, r):
    rng = np.random.default_rng(0)
    U = rng.random((5, 3, 3)) * 10
    theta, value, ok = maximize_kernel_weights(U, s, r)
    assert ok.all()
    p = dual_exponent(s) / 2
    pts = rng.random((4000, 3))
    pts /= (np.sum(pts**r, axis=1) ** (1 / r))[:, None]
    for d in range(5):
        others = np.sum((pts @ U[d].T) ** p, axis=1)
        assert value[d] >= others.max() - 1e-9 * value[d]
        assert np.sum(theta[d] ** r) ** (1 / r) <= 1 + 1e-9


def test_multi_kernel_monotone_in_s():
    data = synth_multitask(3, 12, 3, 0.5, 0.1, seed=1)
    g = build_gram(data, [KernelSpec.gaussian(0.5), KernelSpec.gaussian(2.0), KernelSpec.linear(True)])
    U = sigma_quadratic_forms(g, 3, 100)
    vals = [multi_kernel_values(U, s, 2.0)[0] for s in (2.0, 4.0, 100.0)]
    assert np.all(np.diff(np.array(vals), axis=0) >= -1e-7)


def test_multi_kernel_rejects_small_s():
    with pytest.raises(UnsupportedExponent):
        erc_multi_kernel(identity_stack(M=2), ErcParams(1.5, r=1.0, num_samples=2))


def test_bound_arithmetic():
    bound, branch, tau, rho = erc_bound(2, 4, 1, ErcParams(1.0))
    assert branch == "single_kernel"
    assert rho == pytest.approx(2 * math.log(2))
    assert tau == pytest.approx(1.38629, abs=1e-5)
    assert bound == pytest.approx(0.58870, abs=1e-5)


@pytest.mark.parametrize("T, N", [(2, 4), (5, 30), (26, 100)])
def test_bound_special_cases(T, N):
    s1 = erc_bound(T, N, 1, ErcParams(1.0))[0]
    assert s1 == pytest.approx(2 / (T * math.sqrt(N)) * math.sqrt(2 * math.log(T)), rel=1e-14)
    rho = 2 * math.log(T)
    srho = erc_bound(T, N, 1, ErcParams(dual_exponent(rho)))[0]
    assert srho == pytest.approx(2 / (T * math.sqrt(N)) * math.sqrt(2 * math.e * math.log(T)), rel=1e-12)
    inf = erc_bound(T, N, 1, ErcParams(INF))
    assert inf[1] == "equal_radius"
    assert inf[0] == pytest.approx(2 / math.sqrt(N))


def test_bound_monotone_in_s():
    vals = [erc_bound(5, 20, 1, ErcParams(s))[0] for s in S_GRID]
    assert all(b >= a - 1e-15 for a, b in zip(vals, vals[1:]))


def test_multi_kernel_branches():
    # r = 1: r* = inf >= ln(MT)
    b, branch, tau, rho = erc_bound(4, 10, 3, ErcParams(1.0, r=1.0))
    assert branch == "large_rstar" and rho == pytest.approx(2 * math.log(12))
    expected = 2 / (4 * math.sqrt(10)) * math.sqrt(2 * math.log(12) * 3 ** (1 / math.log(12)))
    assert b == pytest.approx(expected, rel=1e-12)
    # r* = 1.05 <= ln 4
    _, branch, _, _ = erc_bound(4, 10, 3, ErcParams(2.0, r=21.0))
    assert branch == "small_rstar"
    # ln T < r* < ln(MT): general bound
    b, branch, _, _ = erc_bound(4, 10, 30, ErcParams(2.0, r=dual_exponent(2.0)))
    assert branch == "general"
    assert b == pytest.approx(2 / (4 * math.sqrt(10)) * math.sqrt(2 * 4 ** (2 / 2) * 30 ** max(1 / 2, 1)), rel=1e-12)


def test_single_task_bounds():
    with pytest.raises(ValueError):
        erc_bound(1, 10, 1, ErcParams(1.0))
    b, branch, _, _ = erc_bound(1, 16, 1, ErcParams(INF))
    assert branch == "equal_radius" and b == pytest.approx(0.5)


def test_assumption_violation_is_reported():
    g = stack_from_matrices([[2.0 * np.eye(4)], [2.0 * np.eye(4)]])
    rep = erc_single_kernel(g, ErcParams(2.0, num_samples=3))
    assert rep.bound == ASSUMPTION_VIOLATED
    assert rep.bound_value > 0


def test_bound_dominates_estimate(gauss_gram):
    for s in S_GRID:
        rep = erc_single_kernel(gauss_gram, ErcParams(s, num_samples=300, seed=1))
        assert rep.bound >= rep.estimate - 3 * rep.std_error


def test_generalization_bound_example():
    val = generalization_bound(0.1, 0.2, 1.0, 0.05, 2, 4)
    assert val == pytest.approx(0.1 + 0.2 + math.sqrt(9 * math.log(40) / 16), abs=1e-12)
    assert val == pytest.approx(1.74049, abs=1e-5)
    assert generalization_bound(0.0, 0.0, 1.0, 1 - 1e-12, 2, 4) == pytest.approx(math.sqrt(9 * math.log(2) / 16))
    third = lambda TN: generalization_bound(0.0, 0.0, 1.0, 0.05, 1, TN)
    assert third(20) / third(10) == pytest.approx(1 / math.sqrt(2))
    with pytest.raises(ValueError):
        generalization_bound(1.5, 0.0, 1.0, 0.05, 2, 4)


def test_ramp_loss_properties():
    m = np.linspace(-3, 3, 61)
    loss = ramp_loss(m)
    assert np.all((loss >= 0) & (loss <= 1))
    assert np.all(loss >= (m <= 0))
    assert np.all(np.abs(np.diff(loss)) <= np.diff(m) + 1e-12)


def test_empirical_ramp_error_on_trained_model():
    data = synth_multitask(2, 20, 2, 0.5, 0.0, seed=0)
    model = train(data, KernelSpec.gaussian(1.0), 1.5, 10.0)
    err = empirical_ramp_error(model, data)
    assert 0.0 <= err <= 1.0
