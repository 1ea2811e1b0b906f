"""Receding-horizon tracking controller.

Each control step solves the box-constrained finite-horizon problem

    min_U  sum_k ||p_k - ref_k||^2_Q + ||u_k - u_{k-1}||^2_R
    s.t.   q_{k+1} = q_k + Ts u_k,   qdot_min <= u_k <= qdot_max,
           q_min <= q_k <= q_max  (soft penalty + post-hoc check)

with a projected Gauss-Newton SQP over the stacked input sequence: the
output map is relinearized each iteration, input bounds are handled by
projection, and steps are globalized with an Armijo backtracking search
along the projected arc.  On linear output maps one Gauss-Newton step is an
exact quadratic-program solve, which is what the test oracles check.
"""

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from windtune import backend
from windtune.robot import DhParameters, JointLimits

Q_WEIGHT_MIN, Q_WEIGHT_MAX = 1.0, 1.0e6
R_WEIGHT_MIN, R_WEIGHT_MAX = 1.0e-6, 1.0


class SolverStallError(RuntimeError):
    """Line search could not decrease the objective away from a KKT point."""

    def __init__(self, message, solution):
        super().__init__(message)
        self.solution = solution


class WeightBoundsError(ValueError):
    """Proposed weight matrices violate the configured element-wise bounds."""


@dataclass(frozen=True)
class WeightBounds:
    """Element-wise bounds on the tunable Q and R diagonal entries."""

    q_min: float = Q_WEIGHT_MIN
    q_max: float = Q_WEIGHT_MAX
    r_min: float = R_WEIGHT_MIN
    r_max: float = R_WEIGHT_MAX

    def log10(self):
        """((log10 q_min, log10 q_max), (log10 r_min, log10 r_max))."""
        return (
            (np.log10(self.q_min), np.log10(self.q_max)),
            (np.log10(self.r_min), np.log10(self.r_max)),
        )


@dataclass(frozen=True)
class WeightMatrices:
    """Diagonal entries of the position-tracking and input-rate weights."""

    q_diag: np.ndarray
    r_diag: np.ndarray

    def __post_init__(self):
        q = np.ascontiguousarray(self.q_diag, dtype=np.float64)
        r = np.ascontiguousarray(self.r_diag, dtype=np.float64)
        if q.shape != (3,) or r.shape != (6,):
            raise ValueError("q_diag must be length 3, r_diag length 6")
        if not (np.all(q > 0) and np.all(r > 0)):
            raise ValueError("weight entries must be strictly positive")
        object.__setattr__(self, "q_diag", q)
        object.__setattr__(self, "r_diag", r)

    @classmethod
    def identity(cls):
        return cls(np.ones(3), np.ones(6))

    def check_bounds(self, bounds: WeightBounds):
        if np.any(self.q_diag < bounds.q_min) or np.any(self.q_diag > bounds.q_max):
            raise WeightBoundsError(
                f"Q diagonal {self.q_diag} outside [{bounds.q_min}, {bounds.q_max}]"
            )
        if np.any(self.r_diag < bounds.r_min) or np.any(self.r_diag > bounds.r_max):
            raise WeightBoundsError(
                f"R diagonal {self.r_diag} outside [{bounds.r_min}, {bounds.r_max}]"
            )


@dataclass
class NmpcConfig:
    """Horizon, sampling time, joint limits, and solver tolerances."""

    limits: JointLimits
    horizon: int = 10
    ts: float = 0.008
    kkt_tol: float = 1e-6
    max_sqp_iters: int = 30
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    min_step: float = 1e-8
    state_penalty: float = 1e6

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.ts <= 0:
            raise ValueError("ts must be positive")
        if self.kkt_tol <= 0:
            raise ValueError("kkt_tol must be positive")


@dataclass
class CftocSolution:
    """Optimal input sequence and diagnostics for one horizon problem."""

    U_star: np.ndarray
    q_pred: np.ndarray
    p_pred: np.ndarray
    objective: float
    status: str  # converged | max_iters | stalled
    iterations: int
    kkt_residual: float
    state_violation: float
    wall_time_s: float


class DhChainModel:
    """Output model backed by the DH kinematics kernels."""

    def __init__(self, dh: DhParameters):
        self.dh = dh
        self.nq = dh.table.shape[0]
        self.ny = 3

    def rollout(self, q0, U, ts):
        return backend.rollout(self.dh.table, q0, U, ts)

    def rollout_with_jacobian(self, q0, U, ts):
        return backend.rollout_with_jacobian(self.dh.table, q0, U, ts)

    def output(self, q):
        return backend.fk_position(self.dh.table, q)


class LinearModel:
    """Linear output map y = C q; used to verify the solver against QP oracles."""

    def __init__(self, C):
        self.C = np.atleast_2d(np.asarray(C, dtype=np.float64))
        self.ny, self.nq = self.C.shape

    def rollout(self, q0, U, ts):
        N = U.shape[0]
        Q = np.empty((N, self.nq))
        Q[0] = q0
        if N > 1:
            Q[1:] = q0 + ts * np.cumsum(U[:-1], axis=0)
        return Q, Q @ self.C.T

    def rollout_with_jacobian(self, q0, U, ts):
        Q, P = self.rollout(q0, U, ts)
        J = np.broadcast_to(self.C, (U.shape[0], self.ny, self.nq)).copy()
        return Q, P, J

    def output(self, q):
        return self.C @ q


def _horizon_cost(P, Q_traj, U, refs, u_prev, qw, rw, q_lo, q_hi, rho, vpts, vw):
    d = P - refs
    c = float(np.sum(d * d * qw))
    du = np.diff(U, axis=0, prepend=u_prev[None, :])
    c += float(np.sum(du * du * rw))
    viol = np.maximum(Q_traj - q_hi, 0.0) + np.minimum(Q_traj - q_lo, 0.0)
    if np.any(viol):
        c += rho * float(np.sum(viol * viol))
    if vw is not None:
        dv = P - vpts
        c += float(np.sum(dv * dv * vw[:, None]))
    return c


def _assemble(J, P, Q_traj, U, refs, u_prev, qw, rw, q_lo, q_hi, rho, ts, vpts, vw):
    """Exact gradient and Gauss-Newton Hessian of the horizon cost w.r.t. U."""
    N, ny, nu = J.shape
    d = P - refs
    w_out = np.broadcast_to(qw, (N, ny)).copy()  # per-step output weights
    resid = qw * d
    if vw is not None:
        w_out = w_out + vw[:, None]
        resid = resid + vw[:, None] * (P - vpts)
    viol = np.maximum(Q_traj - q_hi, 0.0) + np.minimum(Q_traj - q_lo, 0.0)
    active = (viol != 0.0).astype(np.float64)

    # gradient: position/vertex/bound terms reach u_j through q_k for k > j
    terms = 2.0 * ts * np.einsum("kci,kc->ki", J, resid)
    terms += (2.0 * rho * ts) * viol
    gs = np.zeros((N + 1, nu))
    gs[:N] = np.cumsum(terms[::-1], axis=0)[::-1]
    g = gs[1:].copy()

    du = np.diff(U, axis=0, prepend=u_prev[None, :])
    g += 2.0 * rw * du
    g[:-1] -= 2.0 * rw * du[1:]

    # Gauss-Newton blocks B_k summed over k > max(j1, j2): suffix cumulative sum
    B = 2.0 * ts * ts * np.einsum("kci,kc,kcj->kij", J, w_out, J)
    B[:, np.arange(nu), np.arange(nu)] += 2.0 * rho * ts * ts * active
    Csuf = np.zeros((N + 1, nu, nu))
    Csuf[:N] = np.cumsum(B[::-1], axis=0)[::-1]
    idx = np.maximum.outer(np.arange(N), np.arange(N)) + 1
    H = Csuf[idx].transpose(0, 2, 1, 3).reshape(N * nu, N * nu)

    rdiag = 2.0 * np.asarray(rw, dtype=np.float64)
    for k in range(N):
        sl = slice(k * nu, (k + 1) * nu)
        H[sl, sl][np.arange(nu), np.arange(nu)] += rdiag
        if k < N - 1:
            H[sl, sl][np.arange(nu), np.arange(nu)] += rdiag
            sl2 = slice((k + 1) * nu, (k + 2) * nu)
            H[sl, sl2][np.arange(nu), np.arange(nu)] -= rdiag
            H[sl2, sl][np.arange(nu), np.arange(nu)] -= rdiag
    return g, H


def _projected_gradient_norm(g, U, lo, hi):
    pg = g.copy()
    at_lo = U <= lo
    at_hi = U >= hi
    pg[at_lo] = np.minimum(g[at_lo], 0.0)
    pg[at_hi] = np.maximum(g[at_hi], 0.0)
    return float(np.abs(pg).max()) if pg.size else 0.0


def solve_cftoc_arrays(
    model,
    cfg: NmpcConfig,
    q_weight,
    r_weight,
    q0,
    u_prev,
    ref_window,
    U0=None,
    vertex_points=None,
    vertex_weights=None,
):
    """Solve one horizon problem with raw diagonal weight arrays.

    ``vertex_points``/``vertex_weights`` add the planner's per-step vertex
    attraction term sum_k w_k ||p_k - v_k||^2.  Returns a CftocSolution; the
    'stalled' status is reported, not raised, at this level.
    """
    t0 = time.perf_counter()
    N = cfg.horizon
    nu = model.nq
    ts = cfg.ts
    qw = np.asarray(q_weight, dtype=np.float64)
    rw = np.asarray(r_weight, dtype=np.float64)
    q0 = np.asarray(q0, dtype=np.float64)
    u_prev = np.asarray(u_prev, dtype=np.float64)
    refs = np.asarray(ref_window, dtype=np.float64)
    if refs.shape != (N, model.ny):
        raise ValueError(f"ref_window must be ({N}, {model.ny}), got {refs.shape}")
    lims = cfg.limits
    lo = np.broadcast_to(lims.qdot_min, (N, nu))
    hi = np.broadcast_to(lims.qdot_max, (N, nu))
    q_lo, q_hi = lims.q_min, lims.q_max
    rho = cfg.state_penalty
    vw = None if vertex_weights is None else np.asarray(vertex_weights, dtype=np.float64)
    vpts = None if vertex_points is None else np.asarray(vertex_points, dtype=np.float64)

    U = np.zeros((N, nu)) if U0 is None else np.clip(U0, lo, hi)
    Q_traj, P = model.rollout(q0, U, ts)
    cost = _horizon_cost(P, Q_traj, U, refs, u_prev, qw, rw, q_lo, q_hi, rho, vpts, vw)

    status = "max_iters"
    kkt = np.inf
    it = 0
    for it in range(1, cfg.max_sqp_iters + 1):
        Q_traj, P, J = model.rollout_with_jacobian(q0, U, ts)
        g, H = _assemble(
            J, P, Q_traj, U, refs, u_prev, qw, rw, q_lo, q_hi, rho, ts, vpts, vw
        )
        kkt = _projected_gradient_norm(g, U, lo, hi)
        if kkt <= cfg.kkt_tol:
            status = "converged"
            it -= 1  # this pass only verified stationarity
            break

        # two-metric projection: Newton on the free set, gradient on the
        # binding set, so active box constraints cannot distort the step
        gflat = g.ravel()
        binding = (((U <= lo) & (g > 0.0)) | ((U >= hi) & (g < 0.0))).ravel()
        free = ~binding
        delta_flat = np.where(binding, -gflat, 0.0)
        if np.any(free):
            Hff = H[np.ix_(free, free)]
            jitter = 0.0
            factor = None
            for _ in range(40):  # PD in exact arithmetic; jitter covers roundoff
                try:
                    factor = cho_factor(
                        Hff if jitter == 0.0 else Hff + jitter * np.eye(Hff.shape[0]),
                        lower=True,
                    )
                    break
                except LinAlgError:
                    jitter = max(Hff.trace() / Hff.shape[0] * 1e-12, 10.0 * jitter, 1e-14)
            if factor is None:
                raise LinAlgError("Gauss-Newton Hessian factorization failed")
            delta_flat[free] = cho_solve(factor, -gflat[free])
        delta = delta_flat.reshape(N, nu)

        accepted = False
        for direction in (delta, -g):
            t = 1.0
            while t >= cfg.min_step:
                U_new = np.clip(U + t * direction, lo, hi)
                step_vec = U_new - U
                slope = float(gflat @ step_vec.ravel())
                if slope < 0.0:
                    Q_new, P_new = model.rollout(q0, U_new, ts)
                    cost_new = _horizon_cost(
                        P_new, Q_new, U_new, refs, u_prev, qw, rw, q_lo, q_hi, rho, vpts, vw
                    )
                    if cost_new <= cost + cfg.armijo_c * slope:
                        U, cost = U_new, cost_new
                        accepted = True
                        break
                t *= cfg.backtrack
            if accepted:
                break
        if not accepted:
            status = "stalled"
            break

    Q_traj, P = model.rollout(q0, U, ts)
    objective = _horizon_cost(P, Q_traj, U, refs, u_prev, qw, rw, q_lo, q_hi, rho, vpts, vw)
    viol = np.maximum(Q_traj - q_hi, 0.0) + np.minimum(Q_traj - q_lo, 0.0)
    return CftocSolution(
        U_star=U,
        q_pred=Q_traj,
        p_pred=P,
        objective=objective,
        status=status,
        iterations=it,
        kkt_residual=kkt,
        state_violation=float(np.abs(viol).max()) if viol.size else 0.0,
        wall_time_s=time.perf_counter() - t0,
    )


def solve_cftoc(
    cfg: NmpcConfig,
    weights: WeightMatrices,
    q0,
    u_prev,
    ref_window,
    model: DhChainModel,
    U0=None,
    vertex_points=None,
    vertex_weights=None,
) -> CftocSolution:
    """Solve the tracking CFTOC for the 6-DOF chain.

    Raises:
        SolverStallError: the line search could not decrease the objective
            while the KKT residual was still above tolerance.  The best
            feasible solution found is attached to the exception.
    """
    sol = solve_cftoc_arrays(
        model,
        cfg,
        weights.q_diag,
        weights.r_diag,
        q0,
        u_prev,
        ref_window,
        U0=U0,
        vertex_points=vertex_points,
        vertex_weights=vertex_weights,
    )
    if sol.status == "stalled":
        raise SolverStallError(
            f"line search stalled at KKT residual {sol.kkt_residual:.3e}", sol
        )
    return sol


@dataclass
class StepTelemetry:
    iterations: int
    kkt_residual: float
    wall_time_s: float
    objective: float
    degraded: bool


class TrackingController:
    """Closed-loop NMPC wrapper holding warm starts and the previous input.

    One instance is single-threaded state; independent instances may run in
    parallel rollouts.
    """

    def __init__(self, model, cfg: NmpcConfig, weights: WeightMatrices,
                 u_prev=None, bounds: WeightBounds = WeightBounds()):
        weights.check_bounds(bounds)
        self.model = model
        self.cfg = cfg
        self.weights = weights
        self.bounds = bounds
        self.u_prev = np.zeros(model.nq) if u_prev is None else np.asarray(u_prev, float)
        self._U_warm = np.zeros((cfg.horizon, model.nq))

    def set_weights(self, weights: WeightMatrices):
        """Swap Q/R between repetitions; the warm-start cache is kept."""
        weights.check_bounds(self.bounds)
        self.weights = weights

    def reset(self, u_prev=None):
        self.u_prev = np.zeros(self.model.nq) if u_prev is None else np.asarray(u_prev, float)
        self._U_warm = np.zeros((self.cfg.horizon, self.model.nq))

    def control_step(self, q_measured, ref_window):
        """Return the first optimal input for the current state and window.

        On a solver stall the best feasible sequence found (the shifted
        previous solution or better) is used and the step is flagged
        degraded in the telemetry.
        """
        degraded = False
        try:
            sol = solve_cftoc(
                self.cfg,
                self.weights,
                q_measured,
                self.u_prev,
                ref_window,
                self.model,
                U0=self._U_warm,
            )
        except SolverStallError as err:
            sol = err.solution
            degraded = True
        u0 = sol.U_star[0].copy()
        self._U_warm = np.vstack([sol.U_star[1:], sol.U_star[-1:]])
        self.u_prev = u0
        return u0, StepTelemetry(
            iterations=sol.iterations,
            kkt_residual=sol.kkt_residual,
            wall_time_s=sol.wall_time_s,
            objective=sol.objective,
            degraded=degraded,
        )
