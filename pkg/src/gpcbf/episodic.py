"""Residual labeling from closed-loop trajectories and episodic training.

Labels approximate the certificate residual at sampled states: the j-th time
derivative of the barrier along the true trajectory is measured by repeated
central differences and compared with the nominal chain,

    dtilde_j = FD^j(h) - Lf^j h(x),    j < r,
    dtilde_r = FD^r(h) - (Lf^r h(x) + LgLf^{r-1} h(x) u),
    z = sum_j gamma_j dtilde_j,        y = [gamma; u].

Windows span 2r+1 control periods, so each label lags the live trajectory by
r control steps and labeling runs post-episode.  The training loop repeats
run / label / refit until an episode finishes without a safety violation.
"""

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .barrier import HocbfDesign, certificate_terms, halfspace_qp_filter, zeta_chain
from .errors import InfeasibleConstraintError, IntegrationError
from .gp import (
    DEFAULT_JITTER_SCHEDULE,
    BaseKernelParams,
    CompositeGpModel,
    ResidualDataset,
    fit,
    posterior_coefficients,
)
from .plants import PlantModel, rk4_step
from .socp import STATUS_OPTIMAL, safety_filter_step

TERM_COMPLETED = "completed"
TERM_VIOLATION = "safety_violation"
TERM_INFEASIBLE = "infeasible_abort"
TERM_ABORTED = "aborted"


@dataclass(frozen=True)
class FdConfig:
    """Central-difference sampling: interval dt and window of 2 r_max + 1 points."""

    dt: float
    r_max: int

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError("sampling interval must be positive")
        if self.r_max < 1:
            raise ValueError("need r_max >= 1")

    @property
    def window(self) -> int:
        return 2 * self.r_max + 1


def fd_derivative(samples, order: int, dt: float) -> float:
    """Order-j derivative at the window center by j rounds of central differences.

    Each round maps f_k to (f_{k+1} - f_{k-1}) / (2 dt); truncation is O(dt^2).
    """
    a = np.asarray(samples, dtype=float)
    if order < 0:
        raise ValueError("order must be non-negative")
    if a.size < 2 * order + 1:
        raise ValueError(f"need at least {2 * order + 1} samples for order {order}")
    if a.size % 2 == 0:
        raise ValueError("window must hold an odd number of samples")
    for _ in range(order):
        a = (a[2:] - a[:-2]) / (2.0 * dt)
    return float(a[a.size // 2])


def label_window(
    h_window: np.ndarray,
    x_center: np.ndarray,
    u_center: np.ndarray,
    design: HocbfDesign,
    fd: FdConfig,
) -> tuple[np.ndarray, np.ndarray, float]:
    """One labeled row ((x, y), z) from a barrier window centered at (x, u)."""
    h_window = np.asarray(h_window, dtype=float)
    if h_window.size != 2 * design.r + 1:
        raise ValueError(f"window must hold {2 * design.r + 1} samples")
    u_center = np.atleast_1d(np.asarray(u_center, dtype=float))
    r = design.r
    z = 0.0
    for j in range(1, r + 1):
        measured = fd_derivative(h_window, j, fd.dt)
        nominal = float(design.lie_f_chain[j - 1](x_center))
        if j == r:
            nominal += float(design.lie_g(x_center) @ u_center)
        z += design.gamma[j - 1] * (measured - nominal)
    y = np.concatenate((design.gamma, u_center))
    return np.asarray(x_center, dtype=float), y, z


@dataclass
class EpisodeLog:
    """Per-control-step time series of one closed-loop episode."""

    design_r: int
    t: np.ndarray
    x: np.ndarray  # (steps, n)
    u: np.ndarray  # (steps, m)
    h: np.ndarray
    zeta: np.ndarray  # (steps, r)
    sigma: np.ndarray
    status: list
    necessary: np.ndarray
    sufficient: np.ndarray
    iterations: np.ndarray
    solver_gap: np.ndarray
    termination: str
    violation_time: Optional[float]
    min_h: float

    def __len__(self) -> int:
        return self.t.size

    def to_csv(self, path, trace: bool = False) -> None:
        n = self.x.shape[1] if self.x.size else 0
        m = self.u.shape[1] if self.u.size else 0
        header = (
            ["t"]
            + [f"x_{i}" for i in range(1, n + 1)]
            + [f"u_{i}" for i in range(1, m + 1)]
            + ["h"]
            + [f"zeta_{i}" for i in range(self.design_r)]
            + ["sigma", "status", "necessary_value", "sufficient_eig"]
        )
        if trace:
            header += ["solve_iterations", "solver_gap"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for k in range(len(self)):
                row = (
                    [f"{self.t[k]:.17g}"]
                    + [f"{v:.17g}" for v in self.x[k]]
                    + [f"{v:.17g}" for v in self.u[k]]
                    + [f"{self.h[k]:.17g}"]
                    + [f"{v:.17g}" for v in self.zeta[k]]
                    + [f"{self.sigma[k]:.17g}", self.status[k]]
                    + [f"{self.necessary[k]:.17g}", f"{self.sufficient[k]:.17g}"]
                )
                if trace:
                    row += [str(int(self.iterations[k])), f"{self.solver_gap[k]:.17g}"]
                writer.writerow(row)


def run_episode(
    plant: PlantModel,
    design: HocbfDesign,
    controller: Callable,
    x0,
    horizon: float,
    dt: float = 1e-3,
    control_period: float = 1e-2,
    disturbance: Optional[Callable[[float], float]] = None,
    stop_on_violation: bool = True,
    max_consecutive_infeasible: int = 5,
) -> EpisodeLog:
    """Integrate the true plant under a filtered controller.

    controller(t, x) returns (u, info); info carries the filter diagnostics
    logged per step.  Stops at the horizon, at the first barrier violation
    when flagged, or after too many consecutive infeasible filter steps.
    """
    x = np.asarray(x0, dtype=float).copy()
    substeps = max(1, int(round(control_period / dt)))
    n_ctrl = int(round(horizon / control_period))

    rows_t, rows_x, rows_u, rows_h = [], [], [], []
    rows_zeta, rows_sigma, rows_status = [], [], []
    rows_nec, rows_suf, rows_iter, rows_gap = [], [], [], []
    termination = TERM_COMPLETED
    violation_time = None
    min_h = float(design.h(x))
    consec_infeasible = 0

    def field(xs, us, ts):
        d = disturbance(ts) if disturbance is not None else 0.0
        return plant.field_true(xs, us, d)

    t = 0.0
    for k in range(n_ctrl):
        u, info = controller(t, x)
        u = np.atleast_1d(np.asarray(u, dtype=float))
        rows_t.append(t)
        rows_x.append(x.copy())
        rows_u.append(u.copy())
        rows_h.append(float(design.h(x)))
        rows_zeta.append(zeta_chain(design, x))
        rows_sigma.append(float(info.get("sigma", np.nan)))
        rows_status.append(str(info.get("status", "nominal")))
        rows_nec.append(float(info.get("necessary_value", np.nan)))
        rows_suf.append(float(info.get("sufficient_eig", np.nan)))
        rows_iter.append(int(info.get("iterations", 0)))
        rows_gap.append(float(info.get("solver_gap", np.nan)))

        if info.get("status") == "infeasible":
            consec_infeasible += 1
            if consec_infeasible >= max_consecutive_infeasible:
                termination = TERM_INFEASIBLE
                break
        else:
            consec_infeasible = 0

        stop = False
        try:
            for i in range(substeps):
                x = rk4_step(field, x, u, t, dt)
                t = t + dt
                hval = float(design.h(x))
                min_h = min(min_h, hval)
                if hval < 0.0 and violation_time is None:
                    violation_time = t
                    if stop_on_violation:
                        stop = True
                        break
        except IntegrationError:
            termination = TERM_ABORTED
            break
        if stop:
            termination = TERM_VIOLATION
            rows_t.append(t)
            rows_x.append(x.copy())
            rows_u.append(u.copy())
            rows_h.append(float(design.h(x)))
            rows_zeta.append(zeta_chain(design, x))
            rows_sigma.append(np.nan)
            rows_status.append("violation")
            rows_nec.append(np.nan)
            rows_suf.append(np.nan)
            rows_iter.append(0)
            rows_gap.append(np.nan)
            break

    if termination == TERM_COMPLETED and violation_time is not None and rows_h and rows_h[-1] < 0.0:
        termination = TERM_VIOLATION

    n = plant.n
    m = plant.m
    return EpisodeLog(
        design_r=design.r,
        t=np.asarray(rows_t),
        x=np.asarray(rows_x).reshape(-1, n) if rows_x else np.zeros((0, n)),
        u=np.asarray(rows_u).reshape(-1, m) if rows_u else np.zeros((0, m)),
        h=np.asarray(rows_h),
        zeta=np.asarray(rows_zeta).reshape(-1, design.r) if rows_zeta else np.zeros((0, design.r)),
        sigma=np.asarray(rows_sigma),
        status=rows_status,
        necessary=np.asarray(rows_nec),
        sufficient=np.asarray(rows_suf),
        iterations=np.asarray(rows_iter, dtype=int),
        solver_gap=np.asarray(rows_gap),
        termination=termination,
        violation_time=violation_time,
        min_h=min_h,
    )


def label_episode(
    log: EpisodeLog,
    design: HocbfDesign,
    control_period: float,
    stride: int = 1,
) -> list:
    """Labeled rows from an episode, one window per stride-th control step.

    Rows whose window would cross the episode end (or the trailing violation
    row, which is off the control grid) are dropped.
    """
    r = design.r
    fd = FdConfig(dt=control_period, r_max=r)
    usable = len(log)
    if usable and log.status and log.status[-1] == "violation":
        usable -= 1
    rows = []
    for c in range(r, usable - r, max(1, stride)):
        window = log.h[c - r : c + r + 1]
        rows.append(label_window(window, log.x[c], log.u[c], design, fd))
    return rows


def estimate_noise_variance(z: np.ndarray, floor: float = 1e-6) -> float:
    """Noise floor from the local roughness of the label sequence.

    Central-difference truncation and control switching both make labels
    deviate from a smooth trend; half the median squared second difference
    estimates that spread.  Falls back to the floor for short label sets.
    """
    z = np.asarray(z, dtype=float)
    if z.size < 5:
        return floor
    second = z[2:] - 2.0 * z[1:-1] + z[:-2]
    est = 0.5 * float(np.median(second * second))
    return max(floor, est)


def make_nominal_qp_controller(design: HocbfDesign, u_nom_fn: Callable) -> Callable:
    """Min-norm QP filter on the design's own certificate (closed form)."""

    def controller(t, x):
        u_nom = u_nom_fn(t, x)
        cert = certificate_terms(design, x)
        a = cert.zg
        b = float(cert.zf @ design.gamma) + cert.const
        try:
            u = halfspace_qp_filter(u_nom, a, b)
            status = "optimal"
        except InfeasibleConstraintError:
            u = np.atleast_1d(np.asarray(u_nom, dtype=float))
            status = "infeasible"
        return u, {"status": status}

    return controller


def make_gp_socp_controller(
    design: HocbfDesign,
    model: CompositeGpModel,
    beta: float,
    u_nom_fn: Callable,
    soft: Sequence[tuple] = (),
    tol: float = 1e-8,
    max_iter: int = 100,
) -> Callable:
    """Uncertainty-aware cone filter around a nominal control law.

    On an infeasible step the affine part of the constraint is enforced as a
    best effort and the step is flagged for the episode runner.
    """

    def controller(t, x):
        u_nom = np.atleast_1d(np.asarray(u_nom_fn(t, x), dtype=float))
        cert = certificate_terms(design, x)
        mu, sigma = posterior_coefficients(model, x)
        outcome = safety_filter_step(
            u_nom, cert, mu, sigma, beta, design.gamma, soft=soft, tol=tol, max_iter=max_iter
        )
        if outcome.status == STATUS_OPTIMAL:
            u = outcome.u
        else:
            cone_c = cert.zg + mu[design.r :]
            cone_d = float((cert.zf + mu[: design.r]) @ design.gamma) + cert.const
            try:
                u = halfspace_qp_filter(u_nom, cone_c, cone_d)
            except InfeasibleConstraintError:
                u = u_nom
        y = np.concatenate((design.gamma, u))
        sigma_val = float(np.sqrt(max(y @ sigma @ y, 0.0)))
        info = {
            "status": outcome.status,
            "sigma": sigma_val,
            "necessary_value": outcome.diagnostics.get("necessary_condition_value", np.nan),
            "sufficient_eig": outcome.diagnostics.get("sufficient_condition_eigenvalue", np.nan),
            "iterations": outcome.iterations,
            "solver_gap": outcome.diagnostics.get("solver_gap", np.nan),
        }
        return u, info

    return controller


@dataclass
class TrainResult:
    model: CompositeGpModel
    episodes: list
    dataset: ResidualDataset
    succeeded: bool


def episodic_train(
    plant: PlantModel,
    design: HocbfDesign,
    u_nom_fn: Callable,
    kernel_params: Sequence[BaseKernelParams],
    beta: float,
    x0,
    horizon: float,
    dt: float = 1e-3,
    control_period: float = 1e-2,
    disturbance: Optional[Callable[[float], float]] = None,
    max_episodes: int = 6,
    label_stride: int = 5,
    noise_variance: Optional[float] = None,
    jitter_schedule: Sequence[float] = DEFAULT_JITTER_SCHEDULE,
    solver_tol: float = 1e-8,
    solver_max_iter: int = 100,
    soft: Sequence[tuple] = (),
) -> TrainResult:
    """Run-collect-retrain until an episode completes without violation.

    Episode 1 runs the nominal QP filter; later episodes run the cone filter
    with the model refit on all data so far.  Violating (or aborted) episodes
    contribute labels; the first clean episode ends the loop.
    """
    q = design.m + design.r
    if len(kernel_params) != q:
        raise ValueError(f"need {q} base kernels, got {len(kernel_params)}")
    xs, ys, zs = [], [], []
    episodes = []
    model = fit(
        ResidualDataset(
            X=np.zeros((0, plant.n)), Y=np.zeros((0, q)), z=np.zeros(0), noise_variance=1e-6
        ),
        kernel_params,
        jitter_schedule,
    )
    succeeded = False
    for ep in range(max_episodes):
        if ep == 0:
            controller = make_nominal_qp_controller(design, u_nom_fn)
        else:
            controller = make_gp_socp_controller(
                design, model, beta, u_nom_fn, soft=soft, tol=solver_tol, max_iter=solver_max_iter
            )
        log = run_episode(
            plant,
            design,
            controller,
            x0,
            horizon,
            dt=dt,
            control_period=control_period,
            disturbance=disturbance,
            stop_on_violation=True,
        )
        episodes.append(log)
        if log.termination == TERM_COMPLETED:
            succeeded = True
            break
        for x, y, z in label_episode(log, design, control_period, stride=label_stride):
            xs.append(x)
            ys.append(y)
            zs.append(z)
        zarr = np.asarray(zs)
        sn2 = noise_variance if noise_variance is not None else estimate_noise_variance(zarr)
        dataset = ResidualDataset(
            X=np.asarray(xs).reshape(-1, plant.n),
            Y=np.asarray(ys).reshape(-1, q),
            z=zarr,
            noise_variance=sn2,
        )
        model = fit(dataset, kernel_params, jitter_schedule)
    return TrainResult(model=model, episodes=episodes, dataset=model.dataset, succeeded=succeeded)
