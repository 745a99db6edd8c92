"""Dataset generation, CSV ingestion, splitting and standardization."""

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .exceptions import InputError, NumericalError
from .kernels import Hyperparameters, KernelOperator, KernelSpec
from .preconditioners import pivoted_cholesky

DEFAULT_SPLIT = (0.64, 0.16, 0.20)
EXACT_SAMPLING_LIMIT = 4096


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    truth: Hyperparameters = None
    spec: KernelSpec = None
    seed: int = None

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]


def default_truth(d, spec=None):
    spec = spec or KernelSpec("rbf")
    return Hyperparameters.from_values(1.0, np.full(spec.n_lengthscales(d), 0.5), 1e-2)


def gen_synthetic(n, d=1, seed=0, spec=None, truth=None, max_rank=1024):
    """Standard-normal inputs with targets drawn from a GP prior plus noise.

    Up to ``EXACT_SAMPLING_LIMIT`` points the targets are exact draws via a
    Cholesky factor of ``K + sigma^2 I``; above it the kernel part is drawn
    through a pivoted-Cholesky factor of rank at most ``max_rank``.
    """
    if n < 1 or d < 1:
        raise InputError("need n >= 1 and d >= 1")
    spec = spec or KernelSpec("rbf")
    truth = truth or default_truth(d, spec)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    if n <= EXACT_SAMPLING_LIMIT:
        K = KernelOperator(spec, X, truth).dense()
        try:
            C = linalg.cholesky(K, lower=True)
        except linalg.LinAlgError as exc:
            raise NumericalError(f"cannot factor the prior covariance: {exc}") from exc
        y = C @ rng.standard_normal(n)
    else:
        op = KernelOperator(spec, X, truth, mode="matrix_free")
        L = pivoted_cholesky(op, min(max_rank, n), diag_tol=1e-10 * truth.outputscale**2).factor
        y = L @ rng.standard_normal(L.shape[1]) + np.sqrt(truth.noise) * rng.standard_normal(n)
    return Dataset(X, y, truth, spec, seed)


@dataclass
class Standardizer:
    """Zero-mean, unit-variance affine maps fitted on the training split."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float

    @classmethod
    def fit(cls, X, y, names=None):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        x_std = X.std(axis=0)
        names = names or [f"x{j}" for j in range(X.shape[1])]
        for j in np.flatnonzero(~(x_std > 0)):
            raise InputError(f"column {names[j]!r} is constant on the training split; cannot standardize")
        y_std = float(y.std())
        if not y_std > 0:
            raise InputError("target column is constant on the training split; cannot standardize")
        return cls(X.mean(axis=0), x_std, float(y.mean()), y_std)

    @classmethod
    def identity(cls, d):
        return cls(np.zeros(d), np.ones(d), 0.0, 1.0)

    def transform_X(self, X):
        return (np.asarray(X, dtype=float) - self.x_mean) / self.x_std

    def inverse_transform_X(self, X):
        return np.asarray(X, dtype=float) * self.x_std + self.x_mean

    def transform_y(self, y):
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std

    def inverse_transform_y(self, y):
        return np.asarray(y, dtype=float) * self.y_std + self.y_mean

    def to_dict(self):
        return {"x_mean": self.x_mean.tolist(), "x_std": self.x_std.tolist(),
                "y_mean": self.y_mean, "y_std": self.y_std}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["x_mean"], dtype=float), np.asarray(d["x_std"], dtype=float),
                   float(d["y_mean"]), float(d["y_std"]))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


@dataclass
class DatasetSplits:
    X_train: np.ndarray
    y_train: np.ndarray
    X_val: np.ndarray
    y_val: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    standardizer: Standardizer
    feature_names: list


def _check_fractions(split):
    split = tuple(float(f) for f in split)
    if len(split) != 3 or any(f < 0 for f in split) or not np.isclose(sum(split), 1.0):
        raise InputError(f"split must be three non-negative fractions summing to 1, got {split}")
    if split[0] == 0:
        raise InputError("training fraction must be positive")
    return split


def split_indices(n, split=DEFAULT_SPLIT, seed=0):
    """Deterministic shuffled train/validation/test index arrays."""
    split = _check_fractions(split)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = max(1, int(round(split[0] * n)))
    n_val = int(round(split[1] * n))
    n_val = min(n_val, n - n_train)
    return perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :]


def make_splits(X, y, split=DEFAULT_SPLIT, seed=0, standardize=True, names=None):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    tr, va, te = split_indices(X.shape[0], split, seed)
    names = names or [f"x{j}" for j in range(X.shape[1])]
    st = Standardizer.fit(X[tr], y[tr], names) if standardize else Standardizer.identity(X.shape[1])
    return DatasetSplits(
        st.transform_X(X[tr]), st.transform_y(y[tr]),
        st.transform_X(X[va]), st.transform_y(y[va]),
        st.transform_X(X[te]), st.transform_y(y[te]),
        st, list(names),
    )


def _is_number(cell):
    try:
        float(cell)
    except ValueError:
        return False
    return True


def read_numeric_csv(path):
    """Read a rectangular numeric CSV with a header row.

    Returns
    -------
    header : list of str
    values : array of shape (rows, columns)
    """
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise InputError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if all(_is_number(h) for h in header):
        raise InputError(f"{path}: missing header row (first row is numeric)")
    values = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise InputError(f"{path}: row {i} has {len(row)} cells, expected {len(header)}")
        for j, cell in enumerate(row):
            try:
                values[i - 2, j] = float(cell)
            except ValueError:
                raise InputError(
                    f"{path}: non-numeric cell {cell!r} at row {i}, column {header[j]!r}"
                ) from None
    if not np.all(np.isfinite(values)):
        raise InputError(f"{path}: non-finite values")
    return header, values


def load_csv(path, target_column, standardize=True, split=DEFAULT_SPLIT, seed=0):
    """Load a numeric CSV and return standardized, shuffled splits.

    Standardization statistics come from the training split only.
    """
    header, values = read_numeric_csv(path)
    if target_column not in header:
        raise InputError(f"{path}: target column {target_column!r} not in header {header}")
    t = header.index(target_column)
    names = [h for j, h in enumerate(header) if j != t]
    if not names:
        raise InputError(f"{path}: no feature columns")
    X = np.delete(values, t, axis=1)
    return make_splits(X, values[:, t], split, seed, standardize, names)


def write_dataset_csv(path, X, y, names=None, target="y"):
    X = np.asarray(X, dtype=float)
    names = names or [f"x{j}" for j in range(X.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(names) + [target])
        for row, t in zip(X, y):
            w.writerow([repr(float(v)) for v in row] + [repr(float(t))])
