"""Gaussian-process regression of the scalar certificate residual.

The residual of the high-order certificate is control-affine,

    residual(x, u) = [d_1(x), ..., d_r(x), d_g(x)] . y,    y = [gamma; u],

so the regression uses the composite kernel

    k_c((x, y), (x', y')) = y^T Lambda(x, x') y',
    Lambda(x, x') = diag(k_1(x, x'), ..., k_{m+r}(x, x')),

with one squared-exponential base kernel per y-coordinate.  The payoff is a
posterior whose mean is linear and whose variance is quadratic in the query
regressor y*:

    mean(x*, y*) = mu(x*) y*,          mu = (Kbar alpha)^T,
    var(x*, y*)  = y*^T Sigma(x*) y*,  Sigma = Lambda(x*, x*) - Kbar Kinv Kbar^T,

which is exactly the structure the cone filter needs.  Column j of Kbar is
the base-kernel vector at (x*, x_j) scaled elementwise by y_j.

Gram and cross-kernel assembly are the hot kernels; see ``_accel`` for the
JIT/fallback switch.
"""

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular

from ._accel import NUMBA_ENABLED, maybe_njit
from .errors import IllConditionedDataError

DEFAULT_JITTER_SCHEDULE = (0.0, 1e-10, 1e-8, 1e-6)

# Floor added to Sigma's diagonal so the cone filter's Cholesky always
# succeeds; small enough to stay inside every stated oracle tolerance.
SIGMA_JITTER = 1e-12


@dataclass(frozen=True)
class BaseKernelParams:
    """Squared-exponential kernel: sf2 * exp(-0.5 sum_d ((xd - xd')/ell_d)^2)."""

    signal_variance: float
    lengthscales: np.ndarray

    def __post_init__(self):
        ell = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if self.signal_variance <= 0.0 or np.any(ell <= 0.0):
            raise ValueError("signal variance and lengthscales must be positive")
        object.__setattr__(self, "lengthscales", ell)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))


def base_kernel(x, x2, params: BaseKernelParams) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    ell = params.lengthscales
    if x.shape != x2.shape or x.size != ell.size:
        raise ValueError(f"dimension mismatch: {x.shape}, {x2.shape}, {ell.size} lengthscales")
    d = (x - x2) / ell
    return params.signal_variance * math.exp(-0.5 * float(d @ d))


def composite_kernel(x, y, x2, y2, params: Sequence[BaseKernelParams]) -> float:
    """y^T diag(k_1(x,x'), ..., k_q(x,x')) y' for q = m + r base kernels."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    y2 = np.atleast_1d(np.asarray(y2, dtype=float))
    if y.size != len(params) or y2.size != len(params):
        raise ValueError(f"regressor length {y.size} != {len(params)} base kernels")
    lam = np.array([base_kernel(x, x2, p) for p in params])
    return float(y @ (lam * y2))


@dataclass(frozen=True)
class ResidualDataset:
    """Labeled residual rows ((x_j, y_j), z_j) with shared noise variance.

    Every regressor carries the same leading gamma block: one barrier design
    per dataset.
    """

    X: np.ndarray  # (N, n)
    Y: np.ndarray  # (N, m + r)
    z: np.ndarray  # (N,)
    noise_variance: float

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        z = np.atleast_1d(np.asarray(self.z, dtype=float))
        if X.shape[0] != Y.shape[0] or X.shape[0] != z.size:
            raise ValueError(f"inconsistent row counts {X.shape[0]}, {Y.shape[0]}, {z.size}")
        if self.noise_variance < 0.0:
            raise ValueError("noise variance must be non-negative")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "z", z)

    def __len__(self) -> int:
        return self.z.size


def save_dataset_csv(dataset: ResidualDataset, path) -> None:
    """Write rows as CSV with header x_1..x_n, y_1..y_{m+r}, z."""
    n = dataset.X.shape[1]
    q = dataset.Y.shape[1]
    header = [f"x_{i}" for i in range(1, n + 1)] + [f"y_{i}" for i in range(1, q + 1)] + ["z"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(len(dataset)):
            row = np.concatenate((dataset.X[i], dataset.Y[i], [dataset.z[i]]))
            writer.writerow([f"{v:.17g}" for v in row])


def load_dataset_csv(path, n: int, noise_variance: float) -> ResidualDataset:
    """Read a dataset CSV back; n splits the x columns from the y columns."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[-1] != "z" or not header[0].startswith("x_"):
            raise ValueError(f"unexpected dataset header {header}")
        rows = np.array([[float(v) for v in row] for row in reader])
    if rows.size == 0:
        rows = rows.reshape(0, len(header))
    return ResidualDataset(
        X=rows[:, :n], Y=rows[:, n:-1], z=rows[:, -1], noise_variance=noise_variance
    )


@maybe_njit
def _gram_composite_loops(X, Y, sf2, inv_ell2):
    """Gram matrix of the composite kernel: K[i,j] = sum_t k_t(x_i,x_j) y_it y_jt."""
    N = X.shape[0]
    q = sf2.size
    K = np.empty((N, N))
    for i in range(N):
        for j in range(i, N):
            acc = 0.0
            for t in range(q):
                sq = 0.0
                for d in range(X.shape[1]):
                    diff = X[i, d] - X[j, d]
                    sq += diff * diff * inv_ell2[t, d]
                acc += sf2[t] * math.exp(-0.5 * sq) * Y[i, t] * Y[j, t]
            K[i, j] = acc
            K[j, i] = acc
    return K


def _gram_composite_numpy(X, Y, sf2, inv_ell2):
    N, n = X.shape
    q = sf2.size
    diff2 = (X[:, None, :] - X[None, :, :]) ** 2  # (N, N, n)
    K = np.zeros((N, N))
    for t in range(q):
        kt = sf2[t] * np.exp(-0.5 * diff2 @ inv_ell2[t])
        K += kt * np.outer(Y[:, t], Y[:, t])
    return K


@maybe_njit
def _cross_kbar_loops(X, Y, xstar, sf2, inv_ell2):
    """Kbar (q, N): column j is the base-kernel vector at (x*, x_j) times y_j."""
    N = X.shape[0]
    q = sf2.size
    out = np.empty((q, N))
    for j in range(N):
        for t in range(q):
            sq = 0.0
            for d in range(X.shape[1]):
                diff = xstar[d] - X[j, d]
                sq += diff * diff * inv_ell2[t, d]
            out[t, j] = sf2[t] * math.exp(-0.5 * sq) * Y[j, t]
    return out


def _cross_kbar_numpy(X, Y, xstar, sf2, inv_ell2):
    diff2 = (xstar[None, :] - X) ** 2  # (N, n)
    kt = sf2[:, None] * np.exp(-0.5 * (inv_ell2 @ diff2.T))  # (q, N)
    return kt * Y.T


# The flag selects the compiled loop kernels or the vectorized numpy path.
_gram_composite = _gram_composite_loops if NUMBA_ENABLED else _gram_composite_numpy
_cross_kbar = _cross_kbar_loops if NUMBA_ENABLED else _cross_kbar_numpy


@dataclass(frozen=True)
class CompositeGpModel:
    """Fitted residual model; immutable and safe for concurrent queries."""

    dataset: ResidualDataset
    params: Sequence[BaseKernelParams]
    factor: np.ndarray  # lower Cholesky of K_c + (sigma_n^2 + jitter) I, (N, N)
    weights: np.ndarray  # (K_c + sigma_n^2 I)^{-1} z
    jitter: float

    @property
    def q(self) -> int:
        return len(self.params)

    def prior_lambda(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.diag([base_kernel(x, x, p) for p in self.params])


def _stacked_params(params: Sequence[BaseKernelParams], n: int):
    sf2 = np.array([p.signal_variance for p in params])
    ells = []
    for p in params:
        ell = p.lengthscales
        if ell.size == 1:
            ell = np.full(n, ell[0])
        elif ell.size != n:
            raise ValueError(f"lengthscale length {ell.size} != state dimension {n}")
        ells.append(ell)
    inv_ell2 = 1.0 / np.asarray(ells) ** 2
    return sf2, np.ascontiguousarray(inv_ell2)


def fit(
    dataset: ResidualDataset,
    params: Sequence[BaseKernelParams],
    jitter_schedule: Sequence[float] = DEFAULT_JITTER_SCHEDULE,
) -> CompositeGpModel:
    """Assemble and factorize the composite Gram matrix.

    N = 0 is allowed and yields the prior-only model.  The jitter schedule is
    walked until Cholesky succeeds; exhaustion raises IllConditionedDataError.
    """
    if dataset.Y.shape[1] != len(params) and len(dataset) > 0:
        raise ValueError(
            f"regressor width {dataset.Y.shape[1]} != {len(params)} base kernels"
        )
    N = len(dataset)
    if N == 0:
        return CompositeGpModel(
            dataset=dataset,
            params=tuple(params),
            factor=np.zeros((0, 0)),
            weights=np.zeros(0),
            jitter=0.0,
        )
    sf2, inv_ell2 = _stacked_params(params, dataset.X.shape[1])
    K = _gram_composite(
        np.ascontiguousarray(dataset.X), np.ascontiguousarray(dataset.Y), sf2, inv_ell2
    )
    for jitter in jitter_schedule:
        try:
            factor = np.linalg.cholesky(
                K + (dataset.noise_variance + jitter) * np.eye(N)
            )
        except np.linalg.LinAlgError:
            continue
        weights = _chol_solve(factor, dataset.z)
        return CompositeGpModel(
            dataset=dataset,
            params=tuple(params),
            factor=factor,
            weights=weights,
            jitter=float(jitter),
        )
    raise IllConditionedDataError(
        f"Gram factorization failed for N={N} after jitter schedule {tuple(jitter_schedule)}"
    )


def _forward_sub(L: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve L V = B for lower-triangular L."""
    return solve_triangular(L, B, lower=True)


def _chol_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve (L L^T) x = b."""
    y = solve_triangular(L, b, lower=True)
    return solve_triangular(L.T, y, lower=False)


def log_marginal_likelihood(model: CompositeGpModel) -> float:
    """log p(z | X, Y) of the fitted model (zero prior mean)."""
    N = len(model.dataset)
    if N == 0:
        return 0.0
    logdet = 2.0 * float(np.sum(np.log(np.diag(model.factor))))
    return -0.5 * float(model.dataset.z @ model.weights) - 0.5 * logdet - 0.5 * N * math.log(
        2.0 * math.pi
    )


def grid_refine(
    dataset: ResidualDataset,
    candidates: Sequence[Sequence[BaseKernelParams]],
    jitter_schedule: Sequence[float] = DEFAULT_JITTER_SCHEDULE,
) -> CompositeGpModel:
    """Pick the candidate hyperparameter set with the best marginal likelihood."""
    if not candidates:
        raise ValueError("need at least one candidate parameter set")
    best = None
    best_ll = -math.inf
    for params in candidates:
        model = fit(dataset, params, jitter_schedule)
        ll = log_marginal_likelihood(model)
        if ll > best_ll:
            best, best_ll = model, ll
    return best


def posterior_coefficients(model: CompositeGpModel, xstar) -> tuple[np.ndarray, np.ndarray]:
    """Posterior (mu, Sigma) at a query state.

    mean(x*, y*) = mu @ y* and var(x*, y*) = y* @ Sigma @ y*.  Sigma is
    symmetrized and floored by SIGMA_JITTER on the diagonal so downstream
    factorization succeeds.
    """
    xstar = np.atleast_1d(np.asarray(xstar, dtype=float))
    lam_star = model.prior_lambda(xstar)
    q = model.q
    if len(model.dataset) == 0:
        return np.zeros(q), lam_star + SIGMA_JITTER * np.eye(q)
    sf2, inv_ell2 = _stacked_params(model.params, model.dataset.X.shape[1])
    kbar = _cross_kbar(
        np.ascontiguousarray(model.dataset.X),
        np.ascontiguousarray(model.dataset.Y),
        np.ascontiguousarray(xstar),
        sf2,
        inv_ell2,
    )
    mu = kbar @ model.weights
    V = _forward_sub(model.factor, kbar.T)  # solves L V = Kbar^T
    sigma = lam_star - V.T @ V
    sigma = 0.5 * (sigma + sigma.T) + SIGMA_JITTER * np.eye(q)
    return mu, sigma


@dataclass(frozen=True)
class ConfidenceParams:
    """Scaling beta used by the filter plus the reporting inputs behind it.

    In experiments beta is a configuration scalar; eta (RKHS norm bound) and
    kappa (mutual-information bound) feed :func:`beta_bound` for reporting.
    """

    beta: float
    delta: float = 0.05
    eta: float = 0.0
    kappa: float = 0.0

    def __post_init__(self):
        if self.beta <= 0.0:
            raise ValueError("beta must be positive")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.eta < 0.0 or self.kappa < 0.0:
            raise ValueError("eta and kappa must be non-negative")


def beta_bound(c: ConfidenceParams, N: int) -> float:
    """High-probability scaling sqrt(2 eta^2 + 300 kappa ln^3((N+1)/delta)).

    Natural logarithm throughout.
    """
    logterm = math.log((N + 1) / c.delta)
    return math.sqrt(2.0 * c.eta**2 + 300.0 * c.kappa * logterm**3)
