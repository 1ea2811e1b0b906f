"""Task-level metrics and their normalization into the KPI error vector.

Four metrics are computed from one repetition log: tracking RMSE, RMS of the
input rate, the actuator saturation ratio, and the maximum instantaneous
tracking error.  Each is normalized as (metric - target) / target, so 0
means on-target and negative values mean better than target.
"""

from dataclasses import dataclass

import numpy as np

from windtune.robot import JointLimits

KPI_NAMES = ("rmse", "rms_du", "sat_ratio", "max_ee")


class EmptyLogError(ValueError):
    """Repetition log holds no samples."""


@dataclass(frozen=True)
class KpiTargets:
    """Target values; all strictly positive since they divide the errors."""

    rmse: float = 1.0e-3  # m
    rms_du: float = 0.025  # rad/s
    sat_ratio: float = 0.05
    max_ee: float = 2.0e-3  # m

    def __post_init__(self):
        for name in KPI_NAMES:
            if getattr(self, name) <= 0.0:
                raise ValueError(f"target {name} must be strictly positive")

    def as_array(self):
        return np.array([self.rmse, self.rms_du, self.sat_ratio, self.max_ee])


@dataclass(frozen=True)
class KpiReport:
    rmse: float
    rms_du: float
    sat_ratio: float
    max_ee: float

    def as_array(self):
        return np.array([self.rmse, self.rms_du, self.sat_ratio, self.max_ee])


@dataclass(frozen=True)
class KpiError:
    """Normalized error vector (e_rmse, e_du, e_sat, e_maxee)."""

    e: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.e, dtype=np.float64)
        if v.shape != (4,):
            raise ValueError("KPI error must have 4 components")
        object.__setattr__(self, "e", v)

    @property
    def e_rmse(self):
        return self.e[0]

    @property
    def e_du(self):
        return self.e[1]

    @property
    def e_sat(self):
        return self.e[2]

    @property
    def e_maxee(self):
        return self.e[3]

    def targets_met(self):
        """True when every metric is at or better than its target."""
        return bool(np.all(self.e <= 0.0))


@dataclass
class RepetitionLog:
    """Time-stamped closed-loop record of one task execution."""

    t: np.ndarray
    q: np.ndarray
    u: np.ndarray
    p: np.ndarray
    p_ref: np.ndarray
    solve_iters: np.ndarray
    kkt_residual: np.ndarray
    solve_time_s: np.ndarray
    degraded: np.ndarray

    def __post_init__(self):
        n = len(self.t)
        shapes = {
            "q": (n, 6),
            "u": (n, 6),
            "p": (n, 3),
            "p_ref": (n, 3),
            "solve_iters": (n,),
            "kkt_residual": (n,),
            "solve_time_s": (n,),
            "degraded": (n,),
        }
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"log column {name} must have shape {shape}")

    def __len__(self):
        return len(self.t)

    @property
    def control_effort(self):
        """Sum over steps of the joint-velocity norm (rad/s units)."""
        return float(np.sum(np.linalg.norm(self.u, axis=1)))

    @property
    def mean_error(self):
        return float(np.mean(np.linalg.norm(self.p - self.p_ref, axis=1)))

    @property
    def rms_control(self):
        return float(np.sqrt(np.mean(self.u * self.u)))

    @property
    def mean_solve_time_s(self):
        return float(np.mean(self.solve_time_s))

    def save_csv(self, path):
        cols = ["t"]
        cols += [f"q{i + 1}" for i in range(6)]
        cols += [f"u{i + 1}" for i in range(6)]
        cols += ["px", "py", "pz", "ref_x", "ref_y", "ref_z"]
        cols += ["iters", "kkt", "wall_ms", "degraded"]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for k in range(len(self)):
                row = [f"{self.t[k]:.17g}"]
                row += [f"{v:.17g}" for v in self.q[k]]
                row += [f"{v:.17g}" for v in self.u[k]]
                row += [f"{v:.17g}" for v in self.p[k]]
                row += [f"{v:.17g}" for v in self.p_ref[k]]
                row += [
                    f"{int(self.solve_iters[k])}",
                    f"{self.kkt_residual[k]:.17g}",
                    f"{self.solve_time_s[k] * 1e3:.6g}",
                    f"{int(self.degraded[k])}",
                ]
                fh.write(",".join(row) + "\n")

    @classmethod
    def load_csv(cls, path):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(
            t=data[:, 0],
            q=data[:, 1:7],
            u=data[:, 7:13],
            p=data[:, 13:16],
            p_ref=data[:, 16:19],
            solve_iters=data[:, 19],
            kkt_residual=data[:, 20],
            solve_time_s=data[:, 21] / 1e3,
            degraded=data[:, 22].astype(bool),
        )


def compute_report(log: RepetitionLog, limits: JointLimits, sat_tol=0.01) -> KpiReport:
    """Raw metrics of one repetition.

    The saturation ratio counts steps where any joint speed reaches
    (1 - sat_tol) of its velocity limit; the first input-rate sample uses
    u_{-1} = 0 (start from rest).
    """
    if len(log) == 0:
        raise EmptyLogError("repetition log is empty")
    err = np.linalg.norm(log.p - log.p_ref, axis=1)
    rmse = float(np.sqrt(np.mean(err * err)))
    max_ee = float(err.max())
    du = np.diff(log.u, axis=0, prepend=np.zeros((1, 6)))
    rms_du = float(np.sqrt(np.mean(np.sum(du * du, axis=1))))
    thresh = (1.0 - sat_tol) * limits.qdot_max
    saturated = np.any(np.abs(log.u) >= thresh, axis=1)
    sat_ratio = float(np.mean(saturated))
    return KpiReport(rmse=rmse, rms_du=rms_du, sat_ratio=sat_ratio, max_ee=max_ee)


def normalize(report: KpiReport, targets: KpiTargets) -> KpiError:
    """Component-wise (metric - target) / target."""
    m = report.as_array()
    t = targets.as_array()
    return KpiError((m - t) / t)


KPI_CSV_HEADER = "rep,rmse_m,rms_du,sat_ratio,max_ee_m,e_rmse,e_du,e_sat,e_maxee"


def kpi_csv_row(rep, report: KpiReport, error: KpiError):
    vals = [f"{v:.17g}" for v in report.as_array()] + [f"{v:.17g}" for v in error.e]
    return f"{rep}," + ",".join(vals)


def write_kpi_csv(path, rows):
    """Write per-repetition (rep, report, error) tuples in the standard layout."""
    with open(path, "w") as fh:
        fh.write(KPI_CSV_HEADER + "\n")
        for rep, report, error in rows:
            fh.write(kpi_csv_row(rep, report, error) + "\n")
