"""Posterior-mean prediction and Gaussian predictive scores.

Only what training and evaluation need: the mean from an existing solve
``u = K_hat^{-1} y`` and a per-point variance ``o^2 + sigma^2 - k^T S k``
where ``S`` is either the exact inverse or a preconditioner solve.
"""

import numpy as np

from .kernels import kernel_block

LOG_2PI = np.log(2.0 * np.pi)


def _blocks(m, size):
    for i0 in range(0, m, size):
        yield slice(i0, min(i0 + size, m))


def predict_mean(spec, params, X_train, u, X_new, block_size=1024):
    X_new = np.asarray(X_new, dtype=float)
    out = np.empty(X_new.shape[0])
    for sl in _blocks(X_new.shape[0], block_size):
        out[sl] = kernel_block(spec, params, X_new[sl], X_train) @ u
    return out


def predict_mean_var(spec, params, X_train, u, X_new, solve, block_size=1024):
    """Predictive mean and variance (observation noise included).

    ``solve`` applies an approximation of ``K_hat^{-1}`` to (n, r) blocks.
    The variance is floored at ``sigma^2``.
    """
    X_new = np.asarray(X_new, dtype=float)
    m = X_new.shape[0]
    mean, var = np.empty(m), np.empty(m)
    prior = params.outputscale**2 + params.noise
    for sl in _blocks(m, block_size):
        Kx = kernel_block(spec, params, X_new[sl], X_train)
        mean[sl] = Kx @ u
        var[sl] = prior - np.einsum("ij,ji->i", Kx, solve(Kx.T))
    return mean, np.maximum(var, params.noise)


def gaussian_nlpd(y, mean, var):
    """Mean negative log predictive density per point."""
    y = np.asarray(y, dtype=float)
    return float(np.mean(0.5 * (LOG_2PI + np.log(var) + (y - mean) ** 2 / var)))


def rmse(y, mean):
    return float(np.sqrt(np.mean((np.asarray(y) - mean) ** 2)))
