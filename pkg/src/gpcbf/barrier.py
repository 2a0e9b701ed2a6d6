"""High-order control barrier function calculus with linear class-K gains.

A barrier h of relative degree r and gains k_1..k_r defines the auxiliary
chain

    zeta_0 = h,    zeta_i = d/dt zeta_{i-1} + k_i * zeta_{i-1},

so the final certificate expands along the nominal model to the control-affine
form

    zeta_r(x, u) = sum_j gamma_j * Lf^j h(x) + e_r * h(x) + LgLf^{r-1} h(x) u,

where gamma_j is the (r-j)-th elementary symmetric polynomial of the gains
(gamma_r = 1) and e_r is their product.  The module keeps that decomposition
explicit: designs carry analytic Lie-derivative evaluators and the derived
coefficient vector, and :func:`certificate_terms` returns the affine pieces
consumed by the nominal QP filter and the cone filter.
"""

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InfeasibleConstraintError, InvalidDesignError

StateFn = Callable[[np.ndarray], float]
RowFn = Callable[[np.ndarray], np.ndarray]


def elementary_symmetric(gains: Sequence[float]) -> np.ndarray:
    """Elementary symmetric polynomials [e_1, ..., e_r] of positive gains.

    e_j is the sum over all j-element products of distinct gains; equivalently
    the coefficients of prod_i (s + k_i) = s^r + e_1 s^{r-1} + ... + e_r.
    """
    k = np.asarray(gains, dtype=float)
    if k.ndim != 1 or k.size < 1:
        raise InvalidDesignError("need at least one gain")
    if not np.all(k > 0.0):
        raise InvalidDesignError(f"gains must be strictly positive, got {k}")
    # Multiply out (s + k_i) one factor at a time; coeffs[j] tracks e_j.
    coeffs = np.zeros(k.size + 1)
    coeffs[0] = 1.0
    for ki in k:
        coeffs[1:] = coeffs[1:] + ki * coeffs[:-1]
    return coeffs[1:].copy()


def gamma_vector(gains: Sequence[float]) -> np.ndarray:
    """Residual weighting vector: gamma_i = e_{r-i} with e_0 = 1, so gamma_r = 1."""
    e = elementary_symmetric(gains)
    return np.concatenate((e[:-1][::-1], [1.0]))


def gains_from_char_coeffs(coeffs: Sequence[float]) -> np.ndarray:
    """Back-solve gains from characteristic coefficients [e_1, ..., e_r].

    Returns the roots of t^r - e_1 t^{r-1} + e_2 t^{r-2} - ... sorted
    ascending; raises if any root is complex or non-positive (not a valid
    gain set).
    """
    e = np.asarray(coeffs, dtype=float)
    poly = np.concatenate(([1.0], e * (-1.0) ** np.arange(1, e.size + 1)))
    roots = np.roots(poly)
    if np.any(np.abs(roots.imag) > 1e-9 * (1.0 + np.abs(roots.real))):
        raise InvalidDesignError(f"coefficients {e} do not factor into real gains")
    gains = np.sort(roots.real)
    if np.any(gains <= 0.0):
        raise InvalidDesignError(f"coefficients {e} imply non-positive gains {gains}")
    return gains


@dataclass(frozen=True)
class HocbfDesign:
    """Barrier design: evaluators for the nominal Lie chain plus derived gains.

    lie_f_chain[i-1] evaluates Lf^i h for i = 1..r on the nominal model;
    lie_g evaluates LgLf^{r-1} h as a length-m row.  gamma and e_r are
    derived from the gains at construction.
    """

    r: int
    gains: np.ndarray
    h: StateFn
    lie_f_chain: Sequence[StateFn]
    lie_g: RowFn
    m: int = 1
    gamma: np.ndarray = field(init=False)
    e_r: float = field(init=False)

    def __post_init__(self):
        gains = np.asarray(self.gains, dtype=float)
        if self.r < 1 or gains.size != self.r:
            raise InvalidDesignError(f"need r={self.r} gains, got {gains.size}")
        if len(self.lie_f_chain) != self.r:
            raise InvalidDesignError(
                f"need {self.r} drift Lie evaluators, got {len(self.lie_f_chain)}"
            )
        e = elementary_symmetric(gains)
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "gamma", gamma_vector(gains))
        object.__setattr__(self, "e_r", float(e[-1]))


@dataclass(frozen=True)
class CertificateTerms:
    """Affine decomposition of the nominal certificate at one state.

    zeta_r(x, u) = zf . gamma + const + zg . u, with const = e_r * h(x).
    """

    zf: np.ndarray
    zg: np.ndarray
    const: float

    def value(self, gamma: np.ndarray, u: np.ndarray) -> float:
        return float(self.zf @ gamma + self.const + self.zg @ np.atleast_1d(u))


def certificate_terms(design: HocbfDesign, x: np.ndarray) -> CertificateTerms:
    """Evaluate the certificate's affine pieces at state x.

    zg may be zero at states where the relative degree degrades; feasibility
    of the resulting constraint is the filter's concern, not this function's.
    """
    x = np.asarray(x, dtype=float)
    zf = np.array([lf(x) for lf in design.lie_f_chain], dtype=float)
    zg = np.atleast_1d(np.asarray(design.lie_g(x), dtype=float))
    if not np.all(np.isfinite(zg)):
        raise InvalidDesignError(f"non-finite actuation row {zg} at x={x}")
    return CertificateTerms(zf=zf, zg=zg, const=design.e_r * float(design.h(x)))


def zeta_chain(design: HocbfDesign, x: np.ndarray) -> np.ndarray:
    """Values [zeta_0(x), ..., zeta_{r-1}(x)] of the nominal auxiliary chain.

    zeta_i depends only on the first i gains:
    zeta_i = sum_{j=0}^{i} e_{i-j}(k_1..k_i) * Lf^j h(x).
    """
    x = np.asarray(x, dtype=float)
    lf = np.empty(design.r + 1)
    lf[0] = float(design.h(x))
    for j in range(1, design.r):
        lf[j] = float(design.lie_f_chain[j - 1](x))
    out = np.empty(design.r)
    out[0] = lf[0]
    for i in range(1, design.r):
        e_prefix = elementary_symmetric(design.gains[:i])
        coeffs = np.concatenate((e_prefix[::-1], [1.0]))  # weight of Lf^j h
        out[i] = float(coeffs @ lf[: i + 1])
    return out


def halfspace_qp_filter(u_nom, a, b: float) -> np.ndarray:
    """Min-norm filter for a single affine constraint a.u + b >= 0.

    Returns u_nom when already feasible, otherwise the Euclidean projection
    u_nom - ((a.u_nom + b) / |a|^2) a onto the constraint boundary, which is
    the global minimizer of |u - u_nom| over the half-space.
    """
    u_nom = np.atleast_1d(np.asarray(u_nom, dtype=float))
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = float(b)
    margin = float(a @ u_nom) + b
    if margin >= 0.0:
        return u_nom.copy()
    norm2 = float(a @ a)
    if norm2 == 0.0:
        raise InfeasibleConstraintError(f"constraint 0.u + {b} >= 0 is infeasible")
    return u_nom - (margin / norm2) * a
