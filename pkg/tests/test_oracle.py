import numpy as np
import pytest
from scipy.linalg import expm

from conftest import random_spd
from precondgp.oracle import (condition_number, dense_logdet, dense_matrix_function, dense_matrix_log,
                              dense_quadratic_log, dense_trace_inv_deriv, preconditioned_condition_number)


def test_logdet_identity():
    assert dense_logdet(np.eye(7)) == 0.0


def test_logdet_diagonal():
    assert dense_logdet(np.diag([2.0, 3.0])) == pytest.approx(np.log(6.0), rel=1e-15)


def test_logdet_routes_agree(rng):
    A = random_spd(50, rng, cond=1e4)
    lam = np.linalg.eigvalsh(A)
    assert dense_logdet(A) == pytest.approx(np.sum(np.log(lam)), abs=1e-10)


def test_logdet_rejects_indefinite():
    with pytest.raises(Exception):
        dense_logdet(np.diag([1.0, -1.0]))


def test_matrix_log_identity_and_diagonal():
    np.testing.assert_array_equal(dense_matrix_log(np.eye(4)), np.zeros((4, 4)))
    np.testing.assert_allclose(dense_matrix_log(np.diag([np.e, np.e**2])), np.diag([1.0, 2.0]), atol=1e-15)


def test_matrix_log_round_trip(rng):
    A = random_spd(64, rng)
    np.testing.assert_allclose(expm(dense_matrix_log(A)), A, rtol=1e-9, atol=1e-9 * np.abs(A).max())


def test_trace_inv_deriv_cases(rng):
    A = random_spd(20, rng)
    assert dense_trace_inv_deriv(A, A) == pytest.approx(20.0, rel=1e-12)
    lam = np.linalg.eigvalsh(A)
    assert dense_trace_inv_deriv(A, np.eye(20)) == pytest.approx(np.sum(1 / lam), rel=1e-12)
    assert dense_trace_inv_deriv(np.diag([2.0, 4.0]), np.eye(2)) == pytest.approx(0.75, rel=1e-15)


def test_matrix_function_and_quadratic(rng):
    A = random_spd(16, rng)
    z = rng.standard_normal(16)
    assert dense_quadratic_log(A, z) == pytest.approx(z @ dense_matrix_log(A) @ z, rel=1e-12)
    np.testing.assert_allclose(dense_matrix_function(A, np.reciprocal), np.linalg.inv(A), rtol=1e-9, atol=1e-12)


def test_condition_numbers(rng):
    A = random_spd(30, rng, cond=250.0)
    assert condition_number(A) == pytest.approx(250.0, rel=1e-8)
    assert preconditioned_condition_number(A, A) == pytest.approx(1.0, abs=1e-10)
    assert preconditioned_condition_number(A, np.eye(30)) == pytest.approx(250.0, rel=1e-8)
