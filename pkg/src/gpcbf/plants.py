"""Benchmark plants with paired true/nominal parameter sets.

Two closed-loop case studies: adaptive cruise control (keep a safe headway
while tracking a desired speed) and a quarter-car active suspension (bound
the body displacement under a road bump).  Both barriers have relative
degree two; their Lie-derivative chains are hand-derived below.  A synthetic
zero-mismatch double integrator rounds out the set for end-to-end sanity
checks.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .barrier import HocbfDesign, halfspace_qp_filter
from .errors import IntegrationError, RiccatiError

# Parameter sets as reported for the two case studies.
ACC_NOMINAL = dict(m=825.0, f0=0.1, f1=5.0, f2=0.25, v0=16.0)
ACC_TRUE = dict(m=3300.0, f0=0.2, f1=10.0, f2=0.5, v0=14.0)
SUSPENSION_NOMINAL = dict(m1=300.0, m2=60.0, k1=16e3, k2=190e3, b=1e3)
SUSPENSION_TRUE = dict(m1=675.0, m2=135.0, k1=36e3, k2=427.5e3, b=2.25e3)


@dataclass(frozen=True)
class AccParams:
    """Ego-car mass, rolling-resistance coefficients, lead-car speed."""

    m: float
    f0: float
    f1: float
    f2: float
    v0: float

    def __post_init__(self):
        if self.m <= 0.0:
            raise ValueError("mass must be positive")

    def rolling_resistance(self, v: float) -> float:
        return self.f0 + self.f1 * v + self.f2 * v * v


@dataclass(frozen=True)
class SuspensionParams:
    """Body/wheel masses, suspension/tire stiffnesses, damping."""

    m1: float
    m2: float
    k1: float
    k2: float
    b: float

    def __post_init__(self):
        for name in ("m1", "m2", "k1", "k2", "b"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")


def acc_dynamics(x, u, p: AccParams) -> np.ndarray:
    """x = [v, z]: ego speed and headway; vdot = (u - F_r(v)) / m, zdot = v0 - v."""
    v = x[0]
    u = float(np.asarray(u).reshape(-1)[0])
    return np.array([(-p.rolling_resistance(v) + u) / p.m, p.v0 - v])


def suspension_dynamics(x, u, d, p: SuspensionParams) -> np.ndarray:
    """x = [x1, x2, x3, x4]: body/wheel displacements then velocities."""
    x1, x2, x3, x4 = x
    u = float(np.asarray(u).reshape(-1)[0])
    return np.array(
        [
            x3,
            x4,
            (p.k1 * (x2 - x1) + p.b * (x4 - x3) + u) / p.m1,
            (p.k1 * (x1 - x2) - p.k2 * x2 + p.b * (x3 - x4) - u + p.k2 * d) / p.m2,
        ]
    )


@dataclass(frozen=True)
class PlantModel:
    """Control-affine true/nominal pair sharing dimensions and structure."""

    name: str
    n: int
    m: int
    f_true: Callable[[np.ndarray], np.ndarray]
    g_true: Callable[[np.ndarray], np.ndarray]
    f_nom: Callable[[np.ndarray], np.ndarray]
    g_nom: Callable[[np.ndarray], np.ndarray]
    params_true: dict
    params_nom: dict
    disturbance_gain: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def field_true(self, x, u, d: float = 0.0) -> np.ndarray:
        xdot = self.f_true(x) + self.g_true(x) @ np.atleast_1d(u)
        if self.disturbance_gain is not None and d != 0.0:
            xdot = xdot + self.disturbance_gain(x) * d
        return xdot


def make_acc_plant(params_true: dict = ACC_TRUE, params_nom: dict = ACC_NOMINAL) -> PlantModel:
    pt = AccParams(**params_true)
    pn = AccParams(**params_nom)
    return PlantModel(
        name="acc",
        n=2,
        m=1,
        f_true=lambda x: acc_dynamics(x, 0.0, pt),
        g_true=lambda x: np.array([[1.0 / pt.m], [0.0]]),
        f_nom=lambda x: acc_dynamics(x, 0.0, pn),
        g_nom=lambda x: np.array([[1.0 / pn.m], [0.0]]),
        params_true=dict(params_true),
        params_nom=dict(params_nom),
    )


def make_suspension_plant(
    params_true: dict = SUSPENSION_TRUE, params_nom: dict = SUSPENSION_NOMINAL
) -> PlantModel:
    pt = SuspensionParams(**params_true)
    pn = SuspensionParams(**params_nom)
    return PlantModel(
        name="suspension",
        n=4,
        m=1,
        f_true=lambda x: suspension_dynamics(x, 0.0, 0.0, pt),
        g_true=lambda x: np.array([[0.0], [0.0], [1.0 / pt.m1], [-1.0 / pt.m2]]),
        f_nom=lambda x: suspension_dynamics(x, 0.0, 0.0, pn),
        g_nom=lambda x: np.array([[0.0], [0.0], [1.0 / pn.m1], [-1.0 / pn.m2]]),
        params_true=dict(params_true),
        params_nom=dict(params_nom),
        disturbance_gain=lambda x: np.array([0.0, 0.0, 0.0, pt.k2 / pt.m2]),
    )


def make_synthetic_plant(mismatch: float = 0.0) -> PlantModel:
    """Double integrator; mismatch scales an extra drift on the true side."""
    return PlantModel(
        name="synthetic",
        n=2,
        m=1,
        f_true=lambda x: np.array([x[1], mismatch * (1.0 + 0.5 * x[0] ** 2)]),
        g_true=lambda x: np.array([[0.0], [1.0]]),
        f_nom=lambda x: np.array([x[1], 0.0]),
        g_nom=lambda x: np.array([[0.0], [1.0]]),
        params_true={"mismatch": mismatch},
        params_nom={},
    )


# ---------------------------------------------------------------------------
# hand-derived barrier designs (relative degree two throughout)
# ---------------------------------------------------------------------------


def acc_design(params: dict, gains, D: float = 30.0) -> HocbfDesign:
    """Headway barrier h = z - D for the cruise-control model.

    Lf h = v0 - v;  Lf^2 h = F_r(v) / m;  Lg Lf h = -1 / m.
    """
    p = AccParams(**params)

    return HocbfDesign(
        r=2,
        gains=np.asarray(gains, dtype=float),
        h=lambda x: x[1] - D,
        lie_f_chain=(
            lambda x: p.v0 - x[0],
            lambda x: p.rolling_resistance(x[0]) / p.m,
        ),
        lie_g=lambda x: np.array([-1.0 / p.m]),
        m=1,
    )


def suspension_design(params: dict, gains, D: float = 0.06) -> HocbfDesign:
    """Body-displacement barrier h = D - x1.

    Lf h = -x3;  Lf^2 h = -(k1 (x2 - x1) + b (x4 - x3)) / m1;  Lg Lf h = -1 / m1.
    """
    p = SuspensionParams(**params)

    return HocbfDesign(
        r=2,
        gains=np.asarray(gains, dtype=float),
        h=lambda x: D - x[0],
        lie_f_chain=(
            lambda x: -x[2],
            lambda x: -(p.k1 * (x[1] - x[0]) + p.b * (x[3] - x[2])) / p.m1,
        ),
        lie_g=lambda x: np.array([-1.0 / p.m1]),
        m=1,
    )


def double_integrator_design(gains, D: float = 1.0) -> HocbfDesign:
    """Position barrier h = D - x1 for the synthetic double integrator."""
    return HocbfDesign(
        r=2,
        gains=np.asarray(gains, dtype=float),
        h=lambda x: D - x[0],
        lie_f_chain=(lambda x: -x[1], lambda x: 0.0),
        lie_g=lambda x: np.array([-1.0]),
        m=1,
    )


# ---------------------------------------------------------------------------
# integration and nominal controllers
# ---------------------------------------------------------------------------


def rk4_step(field, x, u, t: float, dt: float) -> np.ndarray:
    """Classical fourth-order Runge-Kutta step with zero-order-held input."""
    k1 = field(x, u, t)
    k2 = field(x + 0.5 * dt * k1, u, t + 0.5 * dt)
    k3 = field(x + 0.5 * dt * k2, u, t + 0.5 * dt)
    k4 = field(x + dt * k3, u, t + dt)
    x_next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(x_next)):
        raise IntegrationError(f"state diverged at t={t}: {x_next}")
    return x_next


def lqr_gain(A, B, Q, R, residual_tol: float = 1e-9, max_iter: int = 100):
    """Continuous-time LQR gain K = R^{-1} B^T P.

    P solves A^T P + P A - P B R^{-1} B^T P + Q = 0, computed from the stable
    invariant subspace of the Hamiltonian via the (doubling-type) matrix sign
    iteration with determinant scaling.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n = A.shape[0]
    Rinv = np.linalg.inv(R)
    Gm = B @ Rinv @ B.T
    H = np.block([[A, -Gm], [-Q, -A.T]])

    S = H.copy()
    for _ in range(max_iter):
        det = abs(float(np.linalg.det(S)))
        c = det ** (1.0 / (2 * n)) if det > 0.0 else 1.0
        S_next = 0.5 * (S / c + c * np.linalg.inv(S))
        if np.linalg.norm(S_next - S) <= 1e-14 * max(1.0, np.linalg.norm(S)):
            S = S_next
            break
        S = S_next
    W = S + np.eye(2 * n)
    # Stable subspace is the graph of P: [W12; W22] P = -[W11; W21].
    lhs = np.vstack((W[:n, n:], W[n:, n:]))
    rhs = -np.vstack((W[:n, :n], W[n:, :n]))
    P, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    P = 0.5 * (P + P.T)
    residual = A.T @ P + P @ A - P @ Gm @ P + Q
    if np.linalg.norm(residual) > residual_tol * max(1.0, np.linalg.norm(Q)):
        raise RiccatiError(f"Riccati residual {np.linalg.norm(residual):.2e} above tolerance")
    K = Rinv @ B.T @ P
    return K, P


def suspension_linear_matrices(params: dict):
    """State-space (A, B) of the suspension model (it is linear)."""
    p = SuspensionParams(**params)
    A = np.array(
        [
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [-p.k1 / p.m1, p.k1 / p.m1, -p.b / p.m1, p.b / p.m1],
            [p.k1 / p.m2, -(p.k1 + p.k2) / p.m2, p.b / p.m2, -p.b / p.m2],
        ]
    )
    B = np.array([[0.0], [0.0], [1.0 / p.m1], [-1.0 / p.m2]])
    return A, B


def clf_nominal_acc(x, v_d: float, lambda_rate: float, params: dict) -> np.ndarray:
    """Min-norm speed-tracking control for V = (v - v_d)^2 on the nominal model.

    The decay condition Vdot <= -lambda V is the half-space a u + b >= 0 with
    a = -2 (v - v_d) / m and b = 2 (v - v_d) F_r(v) / m - lambda V; the
    projection of u = 0 onto it is closed form.
    """
    p = AccParams(**params)
    v = x[0]
    err = v - v_d
    a = np.array([-2.0 * err / p.m])
    b = 2.0 * err * p.rolling_resistance(v) / p.m - lambda_rate * err * err
    if a[0] == 0.0:
        return np.zeros(1)
    return halfspace_qp_filter(np.zeros(1), a, b)


def road_profile(t: float, amplitude: float = 0.08, start: float = 1.0, width: float = 1.0) -> float:
    """Smooth bump: amplitude * sin^2(pi (t - start) / width) inside the window."""
    if start <= t <= start + width:
        s = np.sin(np.pi * (t - start) / width)
        return float(amplitude * s * s)
    return 0.0
