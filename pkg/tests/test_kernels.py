import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from precondgp.exceptions import InputError
from precondgp.kernels import Hyperparameters, KernelOperator, KernelSpec, kernel_value

SPECS = [KernelSpec("rbf"), KernelSpec("matern", 0.5), KernelSpec("matern", 1.5),
         KernelSpec("matern", 2.5), KernelSpec("rq", alpha=0.7)]


def test_rbf_at_zero_distance():
    p = Hyperparameters.from_values(1.0, 1.0, 0.1)
    assert kernel_value(KernelSpec("rbf"), p, [0.3], [0.3]) == 1.0


def test_matern12_closed_form():
    p = Hyperparameters.from_values(1.0, 1.0, 0.1)
    assert kernel_value(KernelSpec("matern", 0.5), p, [0.0], [1.0]) == pytest.approx(np.exp(-1.0), rel=1e-14)


def test_rbf_half_height():
    p = Hyperparameters.from_values(1.0, 1.0, 0.1)
    r = np.sqrt(2 * np.log(2))
    assert kernel_value(KernelSpec("rbf"), p, [0.0], [r]) == pytest.approx(0.5, rel=1e-14)


@pytest.mark.parametrize("nu,expected", [
    (1.5, lambda r: (1 + np.sqrt(3) * r) * np.exp(-np.sqrt(3) * r)),
    (2.5, lambda r: (1 + np.sqrt(5) * r + 5 * r**2 / 3) * np.exp(-np.sqrt(5) * r)),
])
def test_matern_closed_forms(nu, expected):
    p = Hyperparameters.from_values(1.3, 0.8, 0.1)
    r = 0.9 / 0.8
    got = kernel_value(KernelSpec("matern", nu), p, [0.0], [0.9])
    assert got == pytest.approx(1.3**2 * expected(r), rel=1e-13)


def test_rq_closed_form():
    p = Hyperparameters.from_values(1.0, 2.0, 0.1)
    got = kernel_value(KernelSpec("rq", alpha=3.0), p, [1.0], [0.0])
    assert got == pytest.approx((1 + 0.25 / 6.0) ** -3.0, rel=1e-14)


def test_scalar_operator():
    op = KernelOperator(KernelSpec("rbf"), [[0.2]], Hyperparameters.from_values(1.5, 1.0, 0.25))
    np.testing.assert_allclose(op.matvec(np.array([1.0])), [1.5**2 + 0.25], rtol=1e-15)


def test_zero_vector(rbf_op):
    assert not np.any(rbf_op.matvec(np.zeros(rbf_op.n)))


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.name)
@pytest.mark.parametrize("mode", ["dense", "matrix_free"])
def test_matvec_matches_dense_assembly(spec, mode, rng):
    X = rng.standard_normal((64, 2))
    p = Hyperparameters.from_values(0.8, [0.6, 1.7], 0.05)
    op = KernelOperator(spec, X, p, mode=mode, block_size=17)
    # independent assembly, entry by entry
    K = np.array([[kernel_value(spec, p, a, b) for b in X] for a in X]) + 0.05 * np.eye(64)
    v = rng.standard_normal(64)
    np.testing.assert_allclose(op.matvec(v), K @ v, rtol=1e-12, atol=1e-12 * np.abs(K @ v).max())
    V = rng.standard_normal((64, 3))
    np.testing.assert_allclose(op.matvec(V), K @ V, rtol=1e-12, atol=1e-12 * np.abs(K @ V).max())


def test_symmetry(rbf_op, rng):
    u, v = rng.standard_normal((2, rbf_op.n))
    assert u @ rbf_op.matvec(v) == pytest.approx(v @ rbf_op.matvec(u), rel=1e-12)


def test_noise_derivative_is_identity(rbf_op, rng):
    v = rng.standard_normal(rbf_op.n)
    np.testing.assert_array_equal(rbf_op.deriv_matvec(rbf_op.n_params - 1, v), v)


def test_outputscale_derivative_is_two_over_o_times_kernel(rng):
    X = rng.standard_normal((32, 1))
    p = Hyperparameters.from_values(1.7, 0.5, 0.1)
    op = KernelOperator(KernelSpec("rbf"), X, p)
    v = rng.standard_normal(32)
    np.testing.assert_allclose(op.deriv_matvec(0, v), 2 / 1.7 * op.kernel_matvec(v), rtol=1e-13)


def _fd_dense(spec, X, values, which, h=1e-6):
    o, ls, s2 = values
    raw = np.concatenate([[o], np.atleast_1d(ls), [s2]])
    up, dn = raw.copy(), raw.copy()
    up[which] += h
    dn[which] -= h
    mk = lambda r: KernelOperator(spec, X, Hyperparameters.from_values(r[0], r[1:-1], r[-1])).dense()
    return (mk(up) - mk(dn)) / (2 * h)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.name)
def test_derivatives_match_finite_differences(spec, rng):
    X = rng.standard_normal((32, 2))
    values = (1.2, np.array([0.7, 1.4]), 0.05)
    op = KernelOperator(spec, X, Hyperparameters.from_values(*values))
    for which in range(op.n_params):
        fd = _fd_dense(spec, X, values, which)
        np.testing.assert_allclose(op.deriv_dense(which), fd, rtol=1e-5, atol=1e-8)
        v = rng.standard_normal(32)
        np.testing.assert_allclose(op.deriv_matvec(which, v), op.deriv_dense(which) @ v, rtol=1e-12, atol=1e-12)


def test_matern32_lengthscale_matrix_free_derivative(rng):
    X = rng.standard_normal((32, 1))
    spec = KernelSpec("matern", 1.5)
    op = KernelOperator(spec, X, Hyperparameters.from_values(1.0, 0.9, 0.1), mode="matrix_free")
    fd = _fd_dense(spec, X, (1.0, 0.9, 0.1), 1)
    v = rng.standard_normal(32)
    np.testing.assert_allclose(op.deriv_matvec(1, v), fd @ v, rtol=1e-5)


def test_shared_lengthscale():
    spec = KernelSpec("rbf", ard=False)
    X = np.random.default_rng(0).standard_normal((10, 3))
    op = KernelOperator(spec, X, Hyperparameters.from_values(1.0, 0.5, 0.1))
    assert op.n_params == 3
    with pytest.raises(InputError):
        KernelOperator(KernelSpec("rbf"), X, Hyperparameters.from_values(1.0, 0.5, 0.1))


def test_hyperparameters_round_trip():
    p = Hyperparameters.from_values(2.0, [0.5, 3.0], 1e-3)
    q = Hyperparameters.from_vector(p.to_vector())
    assert q == p
    np.testing.assert_allclose(q.raw_vector(), [2.0, 0.5, 3.0, 1e-3], rtol=1e-15)
    assert p.names() == ["outputscale", "lengthscale_0", "lengthscale_1", "noise"]


@pytest.mark.parametrize("bad", [dict(outputscale=0.0), dict(noise=-1.0), dict(lengthscales=np.inf)])
def test_invalid_hyperparameters(bad):
    with pytest.raises(InputError):
        Hyperparameters.from_values(**{**dict(outputscale=1.0, lengthscales=1.0, noise=0.1), **bad})


def test_invalid_specs():
    with pytest.raises(InputError):
        KernelSpec("matern", 2.0)
    with pytest.raises(InputError):
        KernelSpec("periodic")
    with pytest.raises(InputError):
        KernelSpec.from_name("matern72")
    assert KernelSpec.from_name("matern32") == KernelSpec("matern", 1.5)
    assert KernelSpec.from_name("matern52").name == "matern52"


def test_operator_rejects_bad_data():
    p = Hyperparameters.from_values(1.0, 1.0, 0.1)
    with pytest.raises(InputError):
        KernelOperator(KernelSpec("rbf"), [[np.nan]], p)
    op = KernelOperator(KernelSpec("rbf"), [[0.0], [1.0]], p)
    with pytest.raises(InputError):
        op.matvec(np.ones(3))
    with pytest.raises(InputError):
        op.deriv_matvec(5, np.ones(2))


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 20), st.floats(0.1, 3.0), st.floats(0.1, 3.0), st.integers(0, 2**31 - 1),
       st.sampled_from(SPECS))
def test_kernel_matrix_is_symmetric_psd(n, o, ls, seed, spec):
    X = np.random.default_rng(seed).standard_normal((n, 2))
    K = KernelOperator(spec, X, Hyperparameters.from_values(o, [ls, 1.5 * ls], 1e-6)).dense()
    np.testing.assert_array_equal(K, K.T)
    assert np.linalg.eigvalsh(K).min() > -1e-10 * o**2
    np.testing.assert_allclose(np.diag(K), o**2 + 1e-6, rtol=1e-14)
