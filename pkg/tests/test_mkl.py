import math

import numpy as np
import pytest

from lpmtl.data import synth_multitask
from lpmtl.kernels import KernelSpec, build_gram, stack_from_matrices
from lpmtl.mkl import (
    MklModel,
    inner_value,
    predict_mkl,
    train_mkl,
    train_mkl_large_s,
    train_mkl_small_s,
)
from lpmtl.mtl import objective_value, train
from lpmtl.norms import lp_norm

GAUSS = KernelSpec.gaussian(1.0)
KERNELS = [KernelSpec.linear(), KernelSpec.gaussian(1.0)]


@pytest.fixture(scope="module")
def data():
    return synth_multitask(3, 14, 3, 0.5, 0.15, seed=6)


@pytest.mark.parametrize("s", [1.0, 1.5, 4.0])
def test_single_kernel_reduces_to_mtl(data, s):
    mkl = train_mkl(data, [GAUSS], s, 1.0, 1.0)
    single = train(data, GAUSS, s, 1.0)
    assert isinstance(mkl, MklModel)
    np.testing.assert_array_equal(mkl.theta, [1.0])
    assert objective_value(mkl) == pytest.approx(objective_value(single), rel=1e-8)


def test_duplicate_kernels_r1_match_single_kernel(data):
    dup = train_mkl_small_s(data, [GAUSS, GAUSS], 1.5, 1.0, 1.0, tol=1e-9)
    single = train(data, GAUSS, 1.5, 1.0, tol=1e-9)
    assert dup.theta.sum() == pytest.approx(1.0, abs=1e-9)
    assert objective_value(dup) == pytest.approx(objective_value(single), rel=1e-6)


def test_duplicate_kernels_r2_large_s(data):
    # on the unit l2 ball the duplicates act like one kernel scaled by at most sqrt(2)
    dup = train_mkl_large_s(data, [GAUSS, GAUSS], 4.0, 2.0, 1.0)
    ref = inner_value(data, [GAUSS], [math.sqrt(2.0)], 4.0, 1.0)
    assert dup.trace[-1] == pytest.approx(ref, rel=1e-6)


def test_informative_kernel_gets_the_mass():
    data = synth_multitask(2, 20, 3, 0.5, 0.05, seed=2)
    informative = build_gram(data, [GAUSS])
    gram = stack_from_matrices([[row[0], np.ones_like(row[0])] for row in informative.mats])
    model = train_mkl_small_s(data, [GAUSS, KernelSpec.linear()], 1.0, 1.0, 1.0, gram=gram)
    assert model.theta[0] >= 0.99
    assert lp_norm(model.theta, 1.0) <= 1 + 1e-9


def theta_grid_min(data, s, r, C, step=0.01):
    best = math.inf
    for a in np.arange(0.0, 1.0 + 1e-12, step):
        theta = np.array([a, (1.0 - a**r) ** (1.0 / r)])
        best = min(best, inner_value(data, KERNELS, theta, s, C, tol=1e-10, inner_tol=1e-10))
    return best


@pytest.mark.parametrize("s, r", [(1.5, 2.0), (4.0, 1.0), (4.0, 2.0)])
def test_tiny_instance_grid_oracle(s, r):
    data = synth_multitask(1, 6, 2, 0.5, 0.1, seed=3)
    model = train_mkl(data, KERNELS, s, r, 1.0)
    assert objective_value(model) <= theta_grid_min(data, s, r, 1.0) + 1e-4


def test_small_s_trace_monotone_and_feasible(data):
    model = train_mkl_small_s(data, KERNELS + [KernelSpec.gaussian(3.0)], 1.2, 1.5, 1.0)
    trace = np.array(model.trace)
    assert np.all(np.diff(trace) <= 1e-10 * np.abs(trace[:-1]))
    assert lp_norm(model.theta, 1.5) <= 1 + 1e-9
    assert np.all(model.theta >= 0)
    gram = build_gram(data, list(model.kernels))
    for K in gram.composite(model.theta):
        np.linalg.cholesky(K + 1e-8 * np.eye(K.shape[0]))


def test_large_s_best_trace_non_increasing(data):
    model = train_mkl_large_s(data, KERNELS, 4.0, 1.0, 1.0)
    trace = np.array(model.trace)
    assert np.all(np.diff(trace) <= 0)
    assert lp_norm(model.theta, 1.0) <= 1 + 1e-9


def test_one_hot_theta_matches_single_kernel(data):
    model = train_mkl_small_s(data, KERNELS, 1.5, 1.0, 1.0)
    X = np.random.default_rng(0).standard_normal((4, 3))
    single = train(data, GAUSS, 1.5, 1.0)
    model.theta = np.array([0.0, 1.0])
    model.alphas, model.b, model.scales = single.alphas, single.b, single.scales
    for t in range(3):
        np.testing.assert_allclose(predict_mkl(model, X, t), single.decision(X, t), atol=1e-12)


def test_linear_kernel_explicit_weights(data):
    kernels = [KernelSpec.linear(), KernelSpec.polynomial(1)]
    model = train_mkl_small_s(data, kernels, 1.5, 2.0, 1.0)
    X = np.random.default_rng(1).standard_normal((5, 3))
    for t, task in enumerate(data.tasks):
        coef = model.scales[t] * model.alphas[t] * task.labels
        # theta_1 x'z + theta_2 (x'z + 1) = (theta_1 + theta_2) x'z + theta_2
        w = (model.theta[0] + model.theta[1]) * task.features.T @ coef
        offset = model.theta[1] * coef.sum() + model.b[t]
        np.testing.assert_allclose(predict_mkl(model, X, t), X @ w + offset, atol=1e-8)


def test_kkt_margins(data):
    model = train_mkl_small_s(data, KERNELS, 1.5, 1.0, 1.0, inner_tol=1e-9)
    for t, task in enumerate(data.tasks):
        a = model.alphas[t]
        free = (a > 1e-6) & (a < model.box(t) - 1e-6)
        m = task.labels * predict_mkl(model, task.features, t)
        np.testing.assert_allclose(m[free], 1.0, atol=1e-6)


def test_save_load_keeps_kernel_weights(tmp_path, data):
    model = train_mkl(data, KERNELS, 4.0, 1.0, 1.0)
    path = tmp_path / "mkl.json"
    model.save(path)
    back = MklModel.load(path)
    assert isinstance(back, MklModel)
    np.testing.assert_array_equal(back.theta, model.theta)
    assert back.r == 1.0
    X = np.random.default_rng(2).standard_normal((3, 3))
    np.testing.assert_array_equal(predict_mkl(back, X, 0), predict_mkl(model, X, 0))


def test_argument_checks(data):
    with pytest.raises(ValueError):
        train_mkl_small_s(data, KERNELS, 3.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        train_mkl_large_s(data, KERNELS, 2.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        train_mkl_small_s(data, KERNELS, 1.5, 0.5, 1.0)
