"""Experiment orchestration: reference building, closed-loop repetitions,
tuning and BO runs, persistence, and the comparison report.

Everything is driven by one JSON experiment config (see configs/ in the
repository root and the README for the schema).  All randomness is owned by
the BO baseline and derives from the configured seed; repetitions and the
tuner are deterministic.
"""

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from windtune import bo, geometry, kpi, nmpc, tuner
from windtune.robot import (
    DhParameters,
    JointLimits,
    forward_kinematics,
    inverse_kinematics,
    plant_step,
)


class ConfigError(ValueError):
    """Experiment configuration is missing, unreadable, or inconsistent."""


class EmptyReferenceError(ValueError):
    """The tracking reference holds no samples."""


class SolverFailure(RuntimeError):
    """A controller step failed; carries the step index."""


DEFAULT_CONFIG = {
    "seed": 0,
    "output_dir": "out",
    "robot": {
        "dh_csv": None,  # null = packaged UR10e table
        "q_home_deg": [0.0, -60.0, 100.0, -130.0, -90.0, 0.0],
        "qdot_max": [2.0944, 2.0944, 3.1416, 3.1416, 3.1416, 3.1416],
        "q_range_deg": 360.0,
    },
    "core": {
        "edge_length_m": 0.08,
        "offset_m": [-0.75, -0.25, 0.35],
        "sequence": [0, 1, 2, 3, 0, 2, 1, 3],
        "repetitions": 1,
        "speed_mps": 0.02,
        "corner": {"window": 0.005, "slowdown": 0.25},
        "taper": {"peak": 1.0, "window": 0.01},
    },
    "planner": {"q_diag": 2.0e4, "r_diag": 5.0e-3, "vertex_gain": 1.0e3, "w_align": 0.0},
    "nmpc": {"horizon": 10, "ts_s": 0.008, "kkt_tol": 1.0e-6, "max_sqp_iters": 30},
    "targets": {"rmse_m": 1.0e-3, "rms_du": 0.025, "sat_ratio": 0.05, "max_ee_m": 2.0e-3},
    "sat_tol": 0.01,
    "weight_bounds": {"q_min": 1.0, "q_max": 1.0e6, "r_min": 1.0e-6, "r_max": 1.0},
    "tuner": {
        "alpha": [10.0, 1.0, 1.0, 5.0],
        "beta": 0.1,
        "delta": 0.5,
        "epsilon": 0.05,
        "ell_max": 10,
        "refresh_every": 0,
        "stop_on_targets": False,
        "layout": "shared",
    },
    "bo": {"budget": 100, "init_design": 10, "jitter": 0.01, "candidates": 2048},
    "track": {"q_diag": 1.0, "r_diag": 1.0, "repetitions": 1},
}


def _merge(base, override):
    out = dict(base)
    for key, val in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(base[key], dict) and isinstance(val, dict):
            out[key] = _merge(base[key], val)
        else:
            out[key] = val
    return out


@dataclass
class ExperimentConfig:
    """Validated experiment configuration (defaults merged in)."""

    raw: dict
    base_dir: Path = field(default_factory=Path)

    @classmethod
    def from_json(cls, path):
        path = Path(path)
        try:
            with open(path) as fh:
                user = json.load(fh)
        except OSError as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
        except json.JSONDecodeError as err:
            raise ConfigError(f"config {path} is not valid JSON: {err}") from err
        try:
            merged = _merge(DEFAULT_CONFIG, user)
        except ConfigError:
            raise
        return cls(raw=merged, base_dir=path.parent)

    @classmethod
    def defaults(cls, **overrides):
        return cls(raw=_merge(DEFAULT_CONFIG, overrides))

    def __post_init__(self):
        c = self.raw
        if c["nmpc"]["horizon"] < 1 or c["nmpc"]["ts_s"] <= 0:
            raise ConfigError("nmpc horizon/ts_s out of range")
        if c["tuner"]["ell_max"] < 1:
            raise ConfigError("tuner ell_max must be >= 1")
        if not (c["bo"]["budget"] >= c["bo"]["init_design"] >= 2):
            raise ConfigError("bo budget must be >= init_design >= 2")

    @property
    def seed(self):
        return int(self.raw["seed"])

    @property
    def output_dir(self) -> Path:
        out = Path(self.raw["output_dir"])
        return out if out.is_absolute() else self.base_dir / out

    def robot(self):
        rc = self.raw["robot"]
        if rc["dh_csv"]:
            dh_path = Path(rc["dh_csv"])
            if not dh_path.is_absolute():
                dh_path = self.base_dir / dh_path
            if not dh_path.exists():
                raise ConfigError(f"DH table {dh_path} does not exist")
            dh = DhParameters.from_csv(dh_path)
        else:
            dh = DhParameters.ur10e()
        rng = np.deg2rad(float(rc["q_range_deg"]))
        qd = np.asarray(rc["qdot_max"], dtype=np.float64)
        limits = JointLimits(-rng * np.ones(6), rng * np.ones(6), -qd, qd)
        home = np.deg2rad(np.asarray(rc["q_home_deg"], dtype=np.float64))
        return dh, limits, home

    def nmpc_config(self, limits) -> nmpc.NmpcConfig:
        nc = self.raw["nmpc"]
        return nmpc.NmpcConfig(
            limits=limits,
            horizon=int(nc["horizon"]),
            ts=float(nc["ts_s"]),
            kkt_tol=float(nc["kkt_tol"]),
            max_sqp_iters=int(nc["max_sqp_iters"]),
        )

    def targets(self) -> kpi.KpiTargets:
        t = self.raw["targets"]
        return kpi.KpiTargets(
            rmse=t["rmse_m"],
            rms_du=t["rms_du"],
            sat_ratio=t["sat_ratio"],
            max_ee=t["max_ee_m"],
        )

    def weight_bounds(self) -> nmpc.WeightBounds:
        return nmpc.WeightBounds(**self.raw["weight_bounds"])

    def tuner_config(self) -> tuner.TunerConfig:
        tc = dict(self.raw["tuner"])
        tc.pop("layout")
        return tuner.TunerConfig(**tc)

    def layout(self) -> tuner.WeightLayout:
        return tuner.WeightLayout(self.raw["tuner"]["layout"])

    def planner_weights(self) -> geometry.PlannerWeights:
        return geometry.PlannerWeights(**self.raw["planner"])

    def bo_config(self) -> bo.BoConfig:
        lo, hi = self.layout().log_bounds(self.weight_bounds())
        bc = self.raw["bo"]
        return bo.BoConfig(
            bounds=np.stack([lo, hi], axis=1),
            budget=int(bc["budget"]),
            init_design=int(bc["init_design"]),
            jitter=float(bc["jitter"]),
            candidates=int(bc["candidates"]),
            seed=self.seed,
        )

    def track_weights(self) -> nmpc.WeightMatrices:
        tc = self.raw["track"]
        q = np.atleast_1d(np.asarray(tc["q_diag"], dtype=np.float64))
        r = np.atleast_1d(np.asarray(tc["r_diag"], dtype=np.float64))
        q = np.full(3, q[0]) if q.size == 1 else q
        r = np.full(6, r[0]) if r.size == 1 else r
        return nmpc.WeightMatrices(q, r)


@dataclass
class Reference:
    """Everything one repetition needs: the tracking reference and start state."""

    raw: geometry.ReferencePath
    tracking: geometry.ReferencePath
    planner_joints: np.ndarray
    q0: np.ndarray


class Experiment:
    """Configured robot, task geometry, and rollout plumbing."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.dh, self.limits, self.home = cfg.robot()
        self.model = nmpc.DhChainModel(self.dh)
        self.targets = cfg.targets()
        self.sat_tol = float(cfg.raw["sat_tol"])
        self.bounds = cfg.weight_bounds()
        self.layout = cfg.layout()

    def build_reference(self) -> Reference:
        """Densify the winding path, smooth it with the open-loop planner."""
        core, seq, dens = geometry.core_from_config(self.cfg.raw["core"])
        ts = float(self.cfg.raw["nmpc"]["ts_s"])
        raw = geometry.densify(core, seq, ts=ts, **dens)
        q0p = inverse_kinematics(self.dh, raw.points[0], self.home, self.limits)
        joints, tracking = geometry.plan_open_loop(
            self.model,
            self.limits,
            raw,
            self.cfg.planner_weights(),
            q0p,
            horizon=int(self.cfg.raw["nmpc"]["horizon"]),
        )
        q0 = inverse_kinematics(self.dh, tracking.points[0], self.home, self.limits)
        return Reference(raw=raw, tracking=tracking, planner_joints=joints, q0=q0)

    def controller(self, weights: nmpc.WeightMatrices) -> nmpc.TrackingController:
        return nmpc.TrackingController(
            self.model,
            self.cfg.nmpc_config(self.limits),
            weights,
            bounds=self.bounds,
        )

    def report_of(self, log: kpi.RepetitionLog) -> kpi.KpiReport:
        return kpi.compute_report(log, self.limits, self.sat_tol)

    def rollout_fn(self, reference: Reference):
        """Log-domain weight vector -> RolloutResult, with an access counter."""
        counter = {"n": 0}

        def rollout(w):
            counter["n"] += 1
            weights = self.layout.decode(w)
            log = run_repetition(
                self, self.controller(weights), reference.tracking, reference.q0
            )
            report = self.report_of(log)
            return tuner.RolloutResult(
                error=kpi.normalize(report, self.targets), report=report, log=log
            )

        return rollout, counter

    def scalar_objective(self, error: kpi.KpiError) -> float:
        alpha = self.cfg.tuner_config().alpha
        return float(np.sqrt(error.e @ (alpha * error.e)))


def run_repetition(
    experiment: Experiment,
    controller: nmpc.TrackingController,
    path: geometry.ReferencePath,
    q0,
) -> kpi.RepetitionLog:
    """Execute one full task repetition in closed loop.

    Slides an N-point reference window (final point repeated at the tail),
    applies the first optimal input each step, and records every sample.

    Raises:
        EmptyReferenceError: the path has no samples.
        SolverFailure: a step raised; the message carries the step index.
    """
    n = len(path)
    if n == 0:
        raise EmptyReferenceError("tracking reference is empty")
    N = controller.cfg.horizon
    ts = controller.cfg.ts
    limits = experiment.limits
    q = np.asarray(q0, dtype=np.float64).copy()
    log = dict(
        t=path.t.copy(),
        q=np.empty((n, 6)),
        u=np.empty((n, 6)),
        p=np.empty((n, 3)),
        p_ref=path.points.copy(),
        solve_iters=np.empty(n),
        kkt_residual=np.empty(n),
        solve_time_s=np.empty(n),
        degraded=np.zeros(n, dtype=bool),
    )
    for k in range(n):
        try:
            u, tel = controller.control_step(q, path.window(k, N))
        except Exception as err:
            raise SolverFailure(f"control step {k} failed: {err}") from err
        log["q"][k] = q
        log["u"][k] = u
        log["p"][k] = forward_kinematics(experiment.dh, q).p
        log["solve_iters"][k] = tel.iterations
        log["kkt_residual"][k] = tel.kkt_residual
        log["solve_time_s"][k] = tel.wall_time_s
        log["degraded"][k] = tel.degraded
        q = plant_step(q, u, ts, limits)
    return kpi.RepetitionLog(**log)


def paper_targets_met(report: kpi.KpiReport, targets: kpi.KpiTargets) -> bool:
    """The three §-style specification targets: RMSE, max error, RMS control."""
    return (
        report.rmse <= targets.rmse
        and report.max_ee <= targets.max_ee
        and report.rms_du <= targets.rms_du
    )


def convergence_repetition(history: tuner.TuningHistory, targets: kpi.KpiTargets):
    """1-based index of the first repetition meeting the tracking targets."""
    for rec in history.records:
        if rec.report is not None and paper_targets_met(rec.report, targets):
            return rec.repetition + 1
    return None


@dataclass
class MethodMetrics:
    """One column of the comparison table."""

    convergence: str
    rollouts: int
    rmse_m: float
    max_error_m: float
    mean_error_m: float
    control_effort: float
    rms_control: float
    mean_solve_time_ms: float

    @classmethod
    def from_log(cls, log: kpi.RepetitionLog, convergence, rollouts):
        err = np.linalg.norm(log.p - log.p_ref, axis=1)
        return cls(
            convergence=str(convergence),
            rollouts=int(rollouts),
            rmse_m=float(np.sqrt(np.mean(err * err))),
            max_error_m=float(err.max()),
            mean_error_m=float(err.mean()),
            control_effort=log.control_effort,
            rms_control=log.rms_control,
            mean_solve_time_ms=log.mean_solve_time_s * 1e3,
        )


@dataclass
class ComparisonReport:
    """Table-1-style cross-method comparison, derived from persisted logs.

    Control effort is the step sum of joint-velocity norms (rad/s);
    computation time is the mean per-step solver wall time.
    """

    methods: dict

    def to_json(self):
        return {
            "note": (
                "control_effort = sum_k ||u_k||_2 (rad/s); "
                "mean_solve_time_ms = mean per-step solver wall time"
            ),
            "methods": {name: vars(m) for name, m in self.methods.items()},
        }

    def table(self):
        rows = [
            ("Convergence", "convergence"),
            ("Rollouts", "rollouts"),
            ("RMSE [mm]", "rmse_m"),
            ("Max error [mm]", "max_error_m"),
            ("Mean error [mm]", "mean_error_m"),
            ("Control effort [rad/s]", "control_effort"),
            ("RMS control [rad/s]", "rms_control"),
            ("Computation time [ms]", "mean_solve_time_ms"),
        ]
        names = list(self.methods)
        lines = ["{:<26}".format("Metric") + "".join(f"{n:>18}" for n in names)]
        for label, attr in rows:
            vals = []
            for n in names:
                v = getattr(self.methods[n], attr)
                if attr in ("rmse_m", "max_error_m", "mean_error_m"):
                    vals.append(f"{v * 1e3:.4f}")
                elif isinstance(v, float):
                    vals.append(f"{v:.3f}")
                else:
                    vals.append(str(v))
            lines.append(f"{label:<26}" + "".join(f"{v:>18}" for v in vals))
        return "\n".join(lines)
