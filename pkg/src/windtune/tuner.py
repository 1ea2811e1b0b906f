"""Outer-loop iterative weight tuning.

Weights are tuned in the log10 domain: the weight vector ``w`` maps to the
Q/R diagonals through a layout (one shared scalar per matrix by default, or
one entry per diagonal element).  Each repetition executes the task, turns
the KPI report into a normalized error vector e, and applies the
norm-optimal update

    dw* = -(S' alpha S + beta)^-1 S' alpha e,

where S is an empirical sensitivity matrix built from perturbed rollouts.
The update is clipped element-wise to the log-domain weight bounds.
"""

from dataclasses import dataclass, field

import numpy as np

from windtune.kpi import KpiError, KpiReport, RepetitionLog
from windtune.nmpc import WeightBounds, WeightMatrices

N_KPI = 4


class RolloutFailure(RuntimeError):
    """A closed-loop simulation inside the tuning loop failed."""


class NonFiniteKpiError(RuntimeError):
    """A rollout produced a non-finite KPI value."""


@dataclass(frozen=True)
class WeightLayout:
    """Mapping between the log-domain weight vector and Q/R diagonals.

    kind 'shared' uses one scalar per matrix (n_w = 2); 'per_diagonal' uses
    one entry per diagonal element (n_w = 9).
    """

    kind: str = "shared"

    def __post_init__(self):
        if self.kind not in ("shared", "per_diagonal"):
            raise ValueError(f"unknown layout {self.kind!r}")

    @property
    def n_w(self):
        return 2 if self.kind == "shared" else 9

    def decode(self, w) -> WeightMatrices:
        w = np.asarray(w, dtype=np.float64)
        if self.kind == "shared":
            return WeightMatrices(
                np.full(3, 10.0 ** w[0]), np.full(6, 10.0 ** w[1])
            )
        return WeightMatrices(10.0 ** w[:3], 10.0 ** w[3:9])

    def encode(self, weights: WeightMatrices):
        if self.kind == "shared":
            return np.array(
                [np.log10(weights.q_diag[0]), np.log10(weights.r_diag[0])]
            )
        return np.log10(np.concatenate([weights.q_diag, weights.r_diag]))

    def log_bounds(self, bounds: WeightBounds):
        """(lo, hi) arrays for the weight vector in the log10 domain."""
        (ql, qh), (rl, rh) = bounds.log10()
        if self.kind == "shared":
            return np.array([ql, rl]), np.array([qh, rh])
        lo = np.concatenate([np.full(3, ql), np.full(6, rl)])
        hi = np.concatenate([np.full(3, qh), np.full(6, rh)])
        return lo, hi


@dataclass(frozen=True)
class SensitivityMatrix:
    """Empirical Jacobian of the KPI error w.r.t. the log-weight vector."""

    S: np.ndarray
    delta: np.ndarray  # signed perturbation actually used per column
    repetition: int

    def __post_init__(self):
        S = np.asarray(self.S, dtype=np.float64)
        if S.ndim != 2 or S.shape[0] != N_KPI:
            raise ValueError(f"S must be ({N_KPI}, n_w)")
        if not np.all(np.isfinite(S)):
            raise ValueError("sensitivity entries must be finite")
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "delta", np.asarray(self.delta, dtype=np.float64))


@dataclass
class RolloutResult:
    """One closed-loop repetition: normalized error plus optional raw data."""

    error: KpiError
    report: KpiReport | None = None
    log: RepetitionLog | None = None


@dataclass
class TunerConfig:
    """Priorities, regularization, perturbation size, and stop rules."""

    alpha: np.ndarray = field(default_factory=lambda: np.array([10.0, 1.0, 1.0, 5.0]))
    beta: float | np.ndarray = 0.1
    delta: float = 0.5  # log10 decades per sensitivity column
    epsilon: float = 0.05
    ell_max: int = 10
    refresh_every: int = 0  # 0 = estimate once at repetition 0, reuse
    stop_on_targets: bool = True

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        if self.alpha.shape != (N_KPI,) or np.any(self.alpha < 0):
            raise ValueError("alpha must be 4 nonnegative entries")
        if self.ell_max < 1:
            raise ValueError("ell_max must be >= 1")
        if self.delta <= 0:
            raise ValueError("delta must be positive")

    def beta_vector(self, n_w):
        b = np.asarray(self.beta, dtype=np.float64)
        b = np.full(n_w, float(b)) if b.ndim == 0 else b
        if b.shape != (n_w,) or np.any(b <= 0):
            raise ValueError("beta must be strictly positive")
        return b


@dataclass
class TuningRecord:
    repetition: int
    w: np.ndarray
    weights: WeightMatrices
    report: KpiReport | None
    error: KpiError
    dw: np.ndarray | None  # update applied after this repetition
    clipped: np.ndarray | None
    control_effort: float

    @property
    def error_norm(self):
        return float(np.linalg.norm(self.error.e))


@dataclass
class TuningHistory:
    records: list
    converged: bool
    rollout_count: int
    sensitivity: SensitivityMatrix

    def __len__(self):
        return len(self.records)

    @property
    def final(self) -> TuningRecord:
        return self.records[-1]


def _run(rollout, w):
    result = rollout(np.asarray(w, dtype=np.float64))
    if not isinstance(result, RolloutResult):
        raise TypeError("rollout must return a RolloutResult")
    if not np.all(np.isfinite(result.error.e)):
        raise NonFiniteKpiError(f"non-finite KPI error {result.error.e}")
    return result


def estimate_sensitivity(rollout, w, delta, log_lo, log_hi, repetition=0, base=None):
    """Forward-difference sensitivity of the KPI error in the log domain.

    Consumes exactly n_w + 1 rollouts (base plus one per column) and returns
    the base result alongside; passing a precomputed ``base`` skips its
    rollout.  Columns whose positive perturbation would leave the bounds are
    probed with a negative one instead.
    """
    w = np.asarray(w, dtype=np.float64)
    n_w = w.size
    if base is None:
        base = _run(rollout, w)
    S = np.empty((N_KPI, n_w))
    signed = np.empty(n_w)
    for j in range(n_w):
        d = delta if w[j] + delta <= log_hi[j] else -delta
        if w[j] + d < log_lo[j]:
            raise ValueError(f"perturbation of weight {j} leaves the bounds")
        signed[j] = d
        w_j = w.copy()
        w_j[j] += d
        probe = _run(rollout, w_j)
        S[:, j] = (probe.error.e - base.error.e) / d
    return SensitivityMatrix(S=S, delta=signed, repetition=repetition), base


def norm_optimal_update(e, S, alpha, beta):
    """Closed-form minimizer of ||e + S dw||^2_alpha + ||dw||^2_beta."""
    e = np.asarray(e, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    n_w = S.shape[1]
    beta = np.asarray(beta, dtype=np.float64)
    beta_m = np.diag(np.full(n_w, float(beta))) if beta.ndim == 0 else np.diag(beta)
    A = S.T @ (alpha[:, None] * S) + beta_m
    return -np.linalg.solve(A, S.T @ (alpha * e))


def clip_to_bounds(w, log_lo, log_hi):
    """Element-wise clamp in the log domain; also reports which entries moved."""
    w = np.asarray(w, dtype=np.float64)
    clipped = np.clip(w, log_lo, log_hi)
    return clipped, clipped != w


def run_tuning(
    cfg: TunerConfig,
    rollout,
    w0,
    layout: WeightLayout = WeightLayout(),
    bounds: WeightBounds = WeightBounds(),
) -> TuningHistory:
    """Iterative tuning loop over task repetitions.

    ``rollout`` maps a log-domain weight vector to a RolloutResult and is
    assumed deterministic.  The sensitivity matrix is estimated at
    repetition 0 (its base rollout is repetition 0's execution) and reused,
    or re-estimated every ``refresh_every`` repetitions when that is > 0.
    The loop stops when ||e|| <= epsilon, when every KPI meets its target
    (if ``stop_on_targets``), or after ``ell_max`` repetitions.
    """
    w = np.asarray(w0, dtype=np.float64).copy()
    log_lo, log_hi = layout.log_bounds(bounds)
    if np.any(w < log_lo) or np.any(w > log_hi):
        raise ValueError("initial weight vector outside bounds")
    beta = cfg.beta_vector(layout.n_w)
    rollouts = 0

    def counted(wv):
        nonlocal rollouts
        rollouts += 1
        return rollout(wv)

    sens, base = estimate_sensitivity(
        counted, w, cfg.delta, log_lo, log_hi, repetition=0
    )
    records = []
    result = base
    ell = 0
    converged = False
    while True:
        err_norm = float(np.linalg.norm(result.error.e))
        converged = err_norm <= cfg.epsilon or (
            cfg.stop_on_targets and result.error.targets_met()
        )
        record = TuningRecord(
            repetition=ell,
            w=w.copy(),
            weights=layout.decode(w),
            report=result.report,
            error=result.error,
            dw=None,
            clipped=None,
            control_effort=(
                result.log.control_effort if result.log is not None else float("nan")
            ),
        )
        records.append(record)
        if converged or ell + 1 >= cfg.ell_max:
            break
        if cfg.refresh_every > 0 and ell > 0 and ell % cfg.refresh_every == 0:
            # the repetition just logged doubles as the refresh base run
            sens, _ = estimate_sensitivity(
                counted, w, cfg.delta, log_lo, log_hi, repetition=ell, base=result
            )
        dw = norm_optimal_update(result.error.e, sens.S, cfg.alpha, beta)
        w_new, clipped = clip_to_bounds(w + dw, log_lo, log_hi)
        record.dw = w_new - w
        record.clipped = clipped
        w = w_new
        ell += 1
        result = _run(counted, w)
    return TuningHistory(
        records=records,
        converged=converged,
        rollout_count=rollouts,
        sensitivity=sens,
    )
