import numpy as np
import pytest

from precondgp.data import gen_synthetic
from precondgp.exceptions import InputError
from precondgp.kernels import Hyperparameters, KernelSpec
from precondgp.krylov import CgConfig
from precondgp.likelihood import mll_exact
from precondgp.optimizer import (GPObjective, OptConfig, OptTrace, count_model_evaluations, minimize, optimize,
                                 step_seed, strong_wolfe_search)

RBF = KernelSpec("rbf")


def quadratic(target):
    target = np.asarray(target, dtype=float)
    return lambda x, step=0: (0.5 * float((x - target) @ (x - target)), x - target)


def test_quadratic_converges_quickly():
    target = np.array([1.0, -2.0, 0.5])
    x, trace = minimize(quadratic(target), np.zeros(3), OptConfig(max_steps=5, gtol=1e-9))
    np.testing.assert_allclose(x, target, atol=1e-6)
    assert trace.best_step <= 5


def test_counting_contract():
    assert count_model_evaluations(OptTrace()) == 0
    # f = (x-8)^2/2 from 0 with c2 = 0.5: trials at alpha 1/8, 1/4 and 1/2, the last one accepted
    _, trace = minimize(quadratic([8.0]), np.zeros(1), OptConfig(max_steps=1, wolfe_c2=0.5))
    phases = [e.phase for e in trace.evaluations]
    assert phases == ["init", "trial", "trial", "trial"]
    assert count_model_evaluations(trace) == 4 == trace.steps[-1].evaluations_cumulative


def test_cumulative_counts_nondecreasing():
    X, y = _data(120, 2)
    _, trace, _ = optimize(X, y, RBF, Hyperparameters.from_values(1.0, 1.0, 0.1), rank=16, n_probes=8,
                           cfg=OptConfig(max_steps=8), seed=1)
    counts = [s.evaluations_cumulative for s in trace.steps]
    assert counts == sorted(counts) and counts[-1] == count_model_evaluations(trace)


def test_accepted_steps_satisfy_wolfe_on_sampled_values():
    X, y = _data(150, 3)
    cfg = OptConfig(max_steps=10)
    _, trace, _ = optimize(X, y, RBF, Hyperparameters.from_values(1.0, 1.0, 0.1), rank=32, n_probes=8,
                           cfg=cfg, seed=2)
    checked = 0
    for s in trace.steps[1:]:
        if s.note == "rejected":
            continue
        assert s.train_objective <= s.f_start + cfg.armijo_c1 * s.alpha * s.slope_start
        assert abs(s.slope_end) <= cfg.wolfe_c2 * abs(s.slope_start)
        checked += 1
    assert checked >= 2


def test_adam_first_two_steps_by_hand():
    target = np.array([1.0, -3.0])
    cfg = OptConfig(method="adam", max_steps=2, adam_lr=0.1)
    _, trace = minimize(quadratic(target), np.zeros(2), cfg)
    x, m, v = np.zeros(2), np.zeros(2), np.zeros(2)
    expected = []
    for t in (1, 2):
        g = x - target
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x = x - 0.1 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        expected.append(x.copy())
    np.testing.assert_allclose(trace.steps[1].x, expected[0], rtol=1e-14)
    np.testing.assert_allclose(trace.steps[2].x, expected[1], rtol=1e-14)
    np.testing.assert_allclose(expected[0], [0.1, -0.1], rtol=1e-6)


def test_line_search_failure_is_graceful():
    calls = []

    def broken(x, step=0):
        calls.append(x)
        if len(calls) == 1:
            return 1.0, np.array([1.0])
        return np.nan, np.array([np.nan])

    x, trace = minimize(broken, np.zeros(1), OptConfig(max_steps=3, max_linesearch=4))
    assert trace.stop_reason == "line search failed"
    assert trace.steps[-1].note == "rejected"
    np.testing.assert_array_equal(x, np.zeros(1))
    assert count_model_evaluations(trace) == 1 + 4


def test_strong_wolfe_returns_none_when_budget_is_spent():
    f = quadratic([100.0])
    assert strong_wolfe_search(f, np.zeros(1), *f(np.zeros(1)), np.array([1.0]), 1e-3, 1e-4, 0.9, 2) is None


def test_early_stopping_returns_best_validation_point():
    metric = iter([5.0, 4.0, 4.5, 4.6, 4.7, 4.8])
    x, trace = minimize(quadratic([3.0]), np.zeros(1), OptConfig(method="adam", max_steps=10, early_stop_patience=3),
                        validate=lambda x: next(metric))
    assert trace.stop_reason == "early stopping" and trace.best_step == 1
    np.testing.assert_array_equal(x, trace.steps[1].x)


def test_config_validation():
    for bad in (dict(method="sgd"), dict(armijo_c1=0.9, wolfe_c2=0.5), dict(max_steps=0),
                dict(validation_fraction=1.0)):
        with pytest.raises(InputError):
            OptConfig(**bad)
    assert OptConfig(method="L-BFGS").method == "lbfgs"


def test_step_seeds_differ_and_repeat():
    assert step_seed(0, 1) == step_seed(0, 1)
    assert len({step_seed(0, s) for s in range(50)}) == 50


def _data(n, seed):
    ds = gen_synthetic(n, 1, seed=seed, truth=Hyperparameters.from_values(1.0, 0.5, 1e-2))
    return ds.X, ds.y


def test_optimize_is_deterministic():
    X, y = _data(100, 4)
    init = Hyperparameters.from_values(1.0, 1.0, 0.1)
    a = optimize(X, y, RBF, init, rank=16, n_probes=8, cfg=OptConfig(max_steps=5), seed=3)
    b = optimize(X, y, RBF, init, rank=16, n_probes=8, cfg=OptConfig(max_steps=5), seed=3)
    np.testing.assert_array_equal(a[0].to_vector(), b[0].to_vector())
    assert [e.f for e in a[1].evaluations] == [e.f for e in b[1].evaluations]


def test_objective_scale_and_exact_mode():
    X, y = _data(60, 5)
    p = Hyperparameters.from_values(0.9, 0.6, 0.05)
    f, g = GPObjective(X, y, RBF, exact=True)(p.to_vector())
    v, grad = mll_exact(y, X, RBF, p)
    assert f == pytest.approx(-v / 60) and np.allclose(g, -grad / 60)


@pytest.fixture(scope="module")
def n500_runs():
    X, y = _data(500, 0)
    init = Hyperparameters.from_values(1.0, 1.0, 0.1)
    cg = CgConfig(rel_tol=1e-6)
    cfg = OptConfig(max_steps=20)
    dense = optimize(X, y, RBF, init, cfg=cfg, exact=True)
    pre = optimize(X, y, RBF, init, rank=128, n_probes=16, cfg=cfg, seed=0, cg=cg)
    base = optimize(X, y, RBF, init, rank=0, n_probes=16, cfg=cfg, seed=0, cg=cg)
    return X, y, dense, pre, base


def test_n500_reaches_dense_optimum(n500_runs):
    X, y, dense, pre, _ = n500_runs
    L_dense = mll_exact(y, X, RBF, dense[0], gradient=False)[0]
    L_pre = mll_exact(y, X, RBF, pre[0], gradient=False)[0]
    assert abs(L_pre - L_dense) / 500 <= 1e-2


def test_n500_preconditioner_saves_evaluations(n500_runs):
    *_, pre, base = n500_runs
    assert count_model_evaluations(pre[1]) < count_model_evaluations(base[1])
