"""Benchmark orchestration: three arms sharing one nominal control signal.

Arms differ only in the safety filter so the comparison isolates it:

  nominal  - min-norm QP on the nominal-model certificate (what a practitioner
             has; expected to violate under model mismatch),
  gp       - the episodically trained cone filter,
  oracle   - min-norm QP on the true-model certificate (unattainable
             reference).

Each arm writes an episode CSV; the summary table is recomputable from those
files.
"""

import csv
import os
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import config as config_mod
from . import episodic, plants
from .barrier import HocbfDesign
from .config import ExperimentConfig
from .gp import BaseKernelParams, save_dataset_csv


@dataclass
class Scenario:
    plant: plants.PlantModel
    design_nom: HocbfDesign
    design_true: HocbfDesign
    u_nom: Callable
    disturbance: Optional[Callable[[float], float]]
    kernel_params: list


def build_scenario(cfg: ExperimentConfig) -> Scenario:
    """Instantiate plant, barrier designs, nominal controller, and kernels."""
    gains = cfg.hocbf.resolve_gains()
    D = cfg.hocbf.threshold
    disturbance = None
    if cfg.plant == "acc":
        plant = plants.make_acc_plant()
        design_nom = plants.acc_design(plants.ACC_NOMINAL, gains, D)
        design_true = plants.acc_design(plants.ACC_TRUE, gains, D)
        v_d, lam = cfg.controller.v_d, cfg.controller.lambda_rate

        def u_nom(t, x):
            return plants.clf_nominal_acc(x, v_d, lam, plants.ACC_NOMINAL)

    elif cfg.plant == "suspension":
        plant = plants.make_suspension_plant()
        design_nom = plants.suspension_design(plants.SUSPENSION_NOMINAL, gains, D)
        design_true = plants.suspension_design(plants.SUSPENSION_TRUE, gains, D)
        A, B = plants.suspension_linear_matrices(plants.SUSPENSION_NOMINAL)
        K, _ = plants.lqr_gain(
            A, B, cfg.controller.lqr_q * np.eye(4), np.array([[cfg.controller.lqr_r]])
        )
        d = cfg.disturbance

        def u_nom(t, x):
            return -(K @ x)

        def disturbance(t):
            return plants.road_profile(t, d.amplitude, d.start, d.width)

    elif cfg.plant == "synthetic":
        plant = plants.make_synthetic_plant()
        design_nom = plants.double_integrator_design(gains, D)
        design_true = plants.double_integrator_design(gains, D)
        A = np.array([[0.0, 1.0], [0.0, 0.0]])
        B = np.array([[0.0], [1.0]])
        K, _ = plants.lqr_gain(A, B, np.eye(2), np.array([[1.0]]))
        target = np.asarray(cfg.controller.target, dtype=float)

        def u_nom(t, x):
            return -(K @ (x - target))

    else:
        raise ValueError(f"unknown plant {cfg.plant!r}")

    n = plant.n
    ells = cfg.gp.lengthscales
    per_coord = isinstance(ells[0], (list, tuple))
    kernel_params = []
    for i, sf2 in enumerate(cfg.gp.signal_variances):
        ell = np.asarray(ells[i] if per_coord else ells, dtype=float)
        if ell.size != n:
            raise ValueError(f"lengthscales must have {n} entries per coordinate")
        kernel_params.append(BaseKernelParams(float(sf2), ell))
    return Scenario(plant, design_nom, design_true, u_nom, disturbance, kernel_params)


@dataclass
class ArmResult:
    name: str
    log: episodic.EpisodeLog
    csv_path: str


@dataclass
class BenchmarkResult:
    arms: dict
    train: episodic.TrainResult
    summary: list
    out_dir: str


def _rms_vs(log: episodic.EpisodeLog, ref: episodic.EpisodeLog) -> float:
    n = min(len(log), len(ref))
    if log.status and log.status[-1] == "violation":
        n = min(n, len(log) - 1)
    if n == 0:
        return float("nan")
    du = log.u[:n] - ref.u[:n]
    return float(np.sqrt(np.mean(np.sum(du * du, axis=1))))


def _grid_min_h(log: episodic.EpisodeLog) -> float:
    return float(np.min(log.h)) if len(log) else float("nan")


def _grid_violation_time(log: episodic.EpisodeLog) -> Optional[float]:
    idx = np.nonzero(log.h < 0.0)[0]
    return float(log.t[idx[0]]) if idx.size else None


def run_benchmark(cfg: ExperimentConfig, out_dir: Optional[str] = None) -> BenchmarkResult:
    """Run all three arms and write artifacts under the output directory."""
    cfg.validate()
    out_dir = out_dir or cfg.output.dir
    os.makedirs(out_dir, exist_ok=True)
    sc = build_scenario(cfg)
    sim = cfg.sim
    x0 = np.asarray(sim.x0, dtype=float)
    t_start = time.monotonic()

    with open(os.path.join(out_dir, "config.yaml"), "w") as fh:
        fh.write(config_mod.dump(cfg))

    common = dict(
        x0=x0,
        horizon=sim.horizon,
        dt=sim.dt,
        control_period=sim.control_period,
        disturbance=sc.disturbance,
    )

    arms = {}

    def finish_arm(name, log):
        path = os.path.join(out_dir, f"{name}.csv")
        log.to_csv(path, trace=cfg.filter.trace)
        arms[name] = ArmResult(name=name, log=log, csv_path=path)
        return log

    log_nom = finish_arm(
        "nominal",
        episodic.run_episode(
            sc.plant,
            sc.design_nom,
            episodic.make_nominal_qp_controller(sc.design_nom, sc.u_nom),
            stop_on_violation=True,
            **common,
        ),
    )
    log_oracle = finish_arm(
        "oracle",
        episodic.run_episode(
            sc.plant,
            sc.design_true,
            episodic.make_nominal_qp_controller(sc.design_true, sc.u_nom),
            stop_on_violation=False,
            **common,
        ),
    )
    train = episodic.episodic_train(
        sc.plant,
        sc.design_nom,
        sc.u_nom,
        sc.kernel_params,
        beta=cfg.filter.beta,
        max_episodes=cfg.episodic.max_episodes,
        label_stride=cfg.episodic.label_stride,
        noise_variance=cfg.gp.noise_variance,
        jitter_schedule=tuple(cfg.gp.jitter_schedule),
        solver_tol=cfg.filter.solver_tol,
        solver_max_iter=cfg.filter.solver_max_iter,
        **common,
    )
    log_gp = finish_arm("gp", train.episodes[-1])
    for i, ep in enumerate(train.episodes, start=1):
        ep.to_csv(os.path.join(out_dir, f"gp_episode_{i}.csv"), trace=cfg.filter.trace)
    save_dataset_csv(train.dataset, os.path.join(out_dir, "dataset.csv"))

    summary = []
    for name in ("nominal", "gp", "oracle"):
        log = arms[name].log
        solved = log.iterations[np.asarray([s != "violation" for s in log.status])]
        summary.append(
            {
                "arm": name,
                "termination": log.termination,
                "min_h": _grid_min_h(log),
                "violation_time": _grid_violation_time(log),
                "mean_solve_iterations": float(np.mean(solved)) if solved.size else 0.0,
                "rms_dev_from_oracle": _rms_vs(log, log_oracle),
                "dataset_size": len(train.dataset),
                "episodes": len(train.episodes),
            }
        )
    with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(summary[0].keys()))
        writer.writeheader()
        for row in summary:
            writer.writerow(row)

    elapsed = time.monotonic() - t_start
    print(f"benchmark {cfg.plant}: {elapsed:.1f}s wall")
    for row in summary:
        print(
            "  {arm}: {termination}, min_h={min_h:.4g}, viol={violation_time}, "
            "rms_vs_oracle={rms_dev_from_oracle:.4g}".format(**row)
        )
    print(f"  dataset: {len(train.dataset)} rows over {len(train.episodes)} episodes")
    return BenchmarkResult(arms=arms, train=train, summary=summary, out_dir=out_dir)
