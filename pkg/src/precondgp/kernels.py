"""Stationary kernels and matrix-free kernel operators.

Hyperparameters are stored in log-space. Derivatives returned by the operator
are with respect to the *raw* hyperparameters ``(o, l_1..l_p, sigma^2)``;
the chain rule into log-space is applied by the likelihood code.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .exceptions import InputError

FAMILIES = ("rbf", "matern", "rq")
MATERN_NUS = (0.5, 1.5, 2.5)


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family selection.

    Parameters
    ----------
    family : {"rbf", "matern", "rq"}
    nu : float
        Matern smoothness, one of 0.5, 1.5, 2.5. Ignored for other families.
    ard : bool
        One lengthscale per input dimension if True, a single shared one otherwise.
    alpha : float
        Rational-quadratic shape parameter.
    """

    family: str = "rbf"
    nu: float = 1.5
    ard: bool = True
    alpha: float = 1.0

    def __post_init__(self):
        fam = str(self.family).lower()
        aliases = {"se": "rbf", "ratquad": "rq", "rationalquadratic": "rq"}
        fam = aliases.get(fam, fam)
        if fam not in FAMILIES:
            raise InputError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        object.__setattr__(self, "family", fam)
        if fam == "matern" and float(self.nu) not in MATERN_NUS:
            raise InputError(f"Matern nu must be one of {MATERN_NUS}, got {self.nu}")
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise InputError("rational-quadratic alpha must be positive")

    @property
    def name(self):
        if self.family == "matern":
            return f"matern{int(2 * self.nu)}2"
        return self.family

    def n_lengthscales(self, d):
        return d if self.ard else 1

    @classmethod
    def from_name(cls, name, ard=True, alpha=1.0):
        """Parse ``"rbf"``, ``"rq"`` or ``"matern12"``/``"matern32"``/``"matern52"``."""
        key = str(name).strip().lower()
        if key.startswith("matern") and key != "matern":
            nus = {"matern12": 0.5, "matern32": 1.5, "matern52": 2.5}
            if key not in nus:
                raise InputError(f"unknown Matern variant {name!r}; expected one of {sorted(nus)}")
            return cls("matern", nus[key], ard, alpha)
        return cls(key, ard=ard, alpha=alpha)


@dataclass(frozen=True)
class Hyperparameters:
    """Output scale ``o``, lengthscales ``l_j`` and noise variance ``sigma^2``, in log-space."""

    log_outputscale: float
    log_lengthscales: np.ndarray = field(default_factory=lambda: np.zeros(1))
    log_noise: float = np.log(1e-2)

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.log_lengthscales, dtype=float)).copy()
        ls.setflags(write=False)
        object.__setattr__(self, "log_lengthscales", ls)
        object.__setattr__(self, "log_outputscale", float(self.log_outputscale))
        object.__setattr__(self, "log_noise", float(self.log_noise))
        vals = self.raw_vector()
        if ls.ndim != 1 or ls.size == 0:
            raise InputError("need at least one lengthscale")
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
            raise InputError("hyperparameters must exponentiate to finite positive values")

    @classmethod
    def from_values(cls, outputscale=1.0, lengthscales=1.0, noise=1e-2):
        vals = np.concatenate([[outputscale], np.atleast_1d(np.asarray(lengthscales, dtype=float)), [noise]])
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
            raise InputError("hyperparameters must be finite and positive")
        return cls(
            np.log(outputscale),
            np.log(np.atleast_1d(np.asarray(lengthscales, dtype=float))),
            np.log(noise),
        )

    @classmethod
    def from_vector(cls, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.ndim != 1 or theta.size < 3:
            raise InputError("log-space vector needs outputscale, >=1 lengthscale and noise")
        return cls(theta[0], theta[1:-1], theta[-1])

    def to_vector(self):
        return np.concatenate([[self.log_outputscale], self.log_lengthscales, [self.log_noise]])

    def raw_vector(self):
        return np.exp(self.to_vector())

    @property
    def outputscale(self):
        return float(np.exp(self.log_outputscale))

    @property
    def lengthscales(self):
        return np.exp(self.log_lengthscales)

    @property
    def noise(self):
        return float(np.exp(self.log_noise))

    @property
    def size(self):
        return self.log_lengthscales.size + 2

    def names(self):
        return ["outputscale"] + [f"lengthscale_{j}" for j in range(self.log_lengthscales.size)] + ["noise"]

    def __eq__(self, other):
        return isinstance(other, Hyperparameters) and np.array_equal(self.to_vector(), other.to_vector())

    def __hash__(self):
        return hash(self.to_vector().tobytes())


def _profile(spec, s):
    """Kernel as a function of the scaled squared distance ``s``, unit output scale."""
    if spec.family == "rbf":
        return np.exp(-0.5 * s)
    if spec.family == "rq":
        return (1.0 + s / (2.0 * spec.alpha)) ** (-spec.alpha)
    r = np.sqrt(s)
    if spec.nu == 0.5:
        return np.exp(-r)
    if spec.nu == 1.5:
        a = np.sqrt(3.0) * r
        return (1.0 + a) * np.exp(-a)
    a = np.sqrt(5.0) * r
    return (1.0 + a + a * a / 3.0) * np.exp(-a)


def _profile_ds_times_s(spec, s):
    """``s * d/ds`` of the unit profile; finite everywhere including ``s = 0``."""
    if spec.family == "rbf":
        return -0.5 * s * np.exp(-0.5 * s)
    if spec.family == "rq":
        return -0.5 * s * (1.0 + s / (2.0 * spec.alpha)) ** (-spec.alpha - 1.0)
    r = np.sqrt(s)
    if spec.nu == 0.5:
        return -0.5 * r * np.exp(-r)
    if spec.nu == 1.5:
        a = np.sqrt(3.0) * r
        return -0.5 * a * a * np.exp(-a)
    a = np.sqrt(5.0) * r
    return -(a * a / 6.0) * (1.0 + a) * np.exp(-a)


def _profile_ds(spec, s):
    """``d/ds`` of the unit profile, or None where it is singular at zero (Matern 1/2)."""
    if spec.family == "rbf":
        return -0.5 * np.exp(-0.5 * s)
    if spec.family == "rq":
        return -0.5 * (1.0 + s / (2.0 * spec.alpha)) ** (-spec.alpha - 1.0)
    r = np.sqrt(s)
    if spec.nu == 0.5:
        return None
    if spec.nu == 1.5:
        a = np.sqrt(3.0) * r
        return -1.5 * np.exp(-a)
    a = np.sqrt(5.0) * r
    return -(5.0 / 6.0) * (1.0 + a) * np.exp(-a)


def _check_params(spec, params, d):
    p = spec.n_lengthscales(d)
    if params.log_lengthscales.size != p:
        raise InputError(
            f"kernel expects {p} lengthscale(s) for d={d} (ard={spec.ard}), "
            f"got {params.log_lengthscales.size}"
        )


def _scaled_sqdist(X1, X2, lengthscales):
    ls = lengthscales if lengthscales.size > 1 else lengthscales[0]
    return cdist(X1 / ls, X2 / ls, "sqeuclidean")


def kernel_block(spec, params, X1, X2):
    """Dense kernel block ``k(X1, X2)`` without the noise term."""
    s = _scaled_sqdist(X1, X2, params.lengthscales)
    return params.outputscale**2 * _profile(spec, s)


def kernel_deriv_block(spec, params, X1, X2, which):
    """Block of ``dK/dtheta_which`` (raw parameter) without the noise term.

    ``which`` follows the layout of :meth:`Hyperparameters.names`. The noise
    index returns a zero block here; the identity is added by the operator.
    """
    o2 = params.outputscale**2
    p = params.log_lengthscales.size
    if which == 0:
        s = _scaled_sqdist(X1, X2, params.lengthscales)
        return (2.0 / params.outputscale) * o2 * _profile(spec, s)
    if which == p + 1:
        return np.zeros((X1.shape[0], X2.shape[0]))
    ls = params.lengthscales
    s = _scaled_sqdist(X1, X2, ls)
    if p == 1:
        # shared lengthscale: ds/dl = -2 s / l
        return o2 * _profile_ds_times_s(spec, s) * (-2.0 / ls[0])
    j = which - 1
    sj = (X1[:, j, None] - X2[None, :, j]) ** 2 / ls[j] ** 2
    gp = _profile_ds(spec, s)
    if gp is None:
        # Matern 1/2: dk/ds = -exp(-r) / (2r); the product with s_j stays finite
        r = np.sqrt(s)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(r > 0, sj / np.where(r > 0, r, 1.0), 0.0)
        return o2 * np.exp(-r) * ratio / ls[j]
    return o2 * gp * (-2.0 * sj / ls[j])


def kernel_value(spec, params, x, y):
    """Evaluate ``k(x, y)`` for two points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.ndim != 1 or x.shape != y.shape:
        raise InputError(f"dimension mismatch: {x.shape} vs {y.shape}")
    _check_params(spec, params, x.size)
    return float(kernel_block(spec, params, x[None, :], y[None, :])[0, 0])


def as_data(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] == 0:
        raise InputError(f"data must be a non-empty (n, d) array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InputError("data contains non-finite values")
    return X


class KernelOperator:
    """Matrix-free access to ``K_hat = K + sigma^2 I`` and its derivatives.

    Parameters
    ----------
    spec : KernelSpec
    X : array of shape (n, d)
    params : Hyperparameters
    mode : {"dense", "matrix_free"}
        ``"dense"`` assembles ``K`` once; ``"matrix_free"`` recomputes row
        blocks of at most ``block_size`` rows per product.
    block_size : int
    """

    def __init__(self, spec, X, params, mode="dense", block_size=1024):
        self.spec = spec
        self.X = as_data(X)
        self.X.setflags(write=False)
        self.params = params
        if mode not in ("dense", "matrix_free"):
            raise InputError(f"mode must be 'dense' or 'matrix_free', got {mode!r}")
        if block_size < 1:
            raise InputError("block_size must be positive")
        self.mode = mode
        self.block_size = int(block_size)
        self.n, self.d = self.X.shape
        _check_params(spec, params, self.d)
        self.n_params = params.size
        self._K = kernel_block(spec, params, self.X, self.X) if mode == "dense" else None
        self._dK = {}

    @property
    def shape(self):
        return (self.n, self.n)

    @property
    def noise(self):
        return self.params.noise

    def with_params(self, params):
        return KernelOperator(self.spec, self.X, params, self.mode, self.block_size)

    def _check_vec(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.n or v.ndim > 2:
            raise InputError(f"expected leading dimension {self.n}, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InputError("vector has non-finite entries")
        return v

    def _check_which(self, which):
        if not (0 <= int(which) < self.n_params):
            raise InputError(f"hyperparameter index {which} out of range [0, {self.n_params})")
        return int(which)

    def _blocked(self, block_fn, v):
        out = np.empty((self.n,) + v.shape[1:])
        for i0 in range(0, self.n, self.block_size):
            i1 = min(i0 + self.block_size, self.n)
            out[i0:i1] = block_fn(self.X[i0:i1], self.X) @ v
        return out

    def kernel_matvec(self, v):
        """``K v`` without the noise term; ``v`` may be a vector or an (n, r) block."""
        v = self._check_vec(v)
        if self._K is not None:
            return self._K @ v
        return self._blocked(lambda A, B: kernel_block(self.spec, self.params, A, B), v)

    def matvec(self, v):
        """``(K + sigma^2 I) v``."""
        v = self._check_vec(v)
        return self.kernel_matvec(v) + self.noise * v

    __call__ = matvec

    def deriv_matvec(self, which, v):
        """``(dK_hat/dtheta) v`` for the raw hyperparameter at index ``which``."""
        which = self._check_which(which)
        v = self._check_vec(v)
        if which == self.n_params - 1:
            return v.copy()
        if self.mode == "dense":
            return self.deriv_dense(which) @ v
        return self._blocked(
            lambda A, B: kernel_deriv_block(self.spec, self.params, A, B, which), v
        )

    def diagonal(self):
        """Diagonal of ``K`` (no noise); equals ``o^2`` for stationary kernels."""
        return np.full(self.n, self.params.outputscale**2)

    def deriv_diagonal(self, which):
        """Diagonal of ``dK_hat/dtheta``."""
        which = self._check_which(which)
        if which == 0:
            return np.full(self.n, 2.0 * self.params.outputscale)
        if which == self.n_params - 1:
            return np.ones(self.n)
        return np.zeros(self.n)

    def columns(self, idx):
        """Columns ``K[:, idx]`` (no noise)."""
        idx = np.atleast_1d(np.asarray(idx, dtype=int))
        if self._K is not None:
            return self._K[:, idx]
        return kernel_block(self.spec, self.params, self.X, self.X[idx])

    def column(self, i):
        return self.columns([i])[:, 0]

    def deriv_columns(self, which, idx):
        """Columns of ``dK/dtheta`` (no noise identity)."""
        which = self._check_which(which)
        idx = np.atleast_1d(np.asarray(idx, dtype=int))
        return kernel_deriv_block(self.spec, self.params, self.X, self.X[idx], which)

    def dense(self, noise=True):
        K = self._K.copy() if self._K is not None else kernel_block(self.spec, self.params, self.X, self.X)
        if noise:
            K[np.diag_indices_from(K)] += self.noise
        return K

    def deriv_dense(self, which):
        """Dense ``dK_hat/dtheta`` (includes the identity for the noise index)."""
        which = self._check_which(which)
        if which == self.n_params - 1:
            return np.eye(self.n)
        if which not in self._dK:
            D = kernel_deriv_block(self.spec, self.params, self.X, self.X, which)
            if self.mode != "dense":
                return D
            D.setflags(write=False)
            self._dK[which] = D
        return self._dK[which]
