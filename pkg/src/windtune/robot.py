"""Kinematic model of a 6-DOF serial manipulator.

Forward kinematics and the position Jacobian run on the selected kernel
backend; inverse kinematics is a damped-least-squares iteration on top of
them.  Joint states and commands are plain float64 arrays of length 6.
"""

import importlib.resources
from dataclasses import dataclass, field

import numpy as np

from windtune import backend

N_JOINTS = 6


class IkError(RuntimeError):
    """Inverse kinematics did not converge to the requested tolerance."""


@dataclass(frozen=True)
class DhParameters:
    """Per-joint DH rows (a, alpha, d, theta_offset), exactly 6 rows."""

    table: np.ndarray

    def __post_init__(self):
        t = np.ascontiguousarray(self.table, dtype=np.float64)
        if t.shape != (N_JOINTS, 4):
            raise ValueError(f"DH table must be ({N_JOINTS}, 4), got {t.shape}")
        if not np.all(np.isfinite(t)):
            raise ValueError("DH table entries must be finite")
        object.__setattr__(self, "table", t)

    @classmethod
    def from_csv(cls, path):
        """Load a 6-row table from CSV with columns a,alpha,d,theta_offset."""
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(rows)

    @classmethod
    def ur10e(cls):
        """Published UR10e table shipped with the package."""
        ref = importlib.resources.files("windtune").joinpath("data/ur10e_dh.csv")
        with importlib.resources.as_file(ref) as path:
            return cls.from_csv(path)


@dataclass(frozen=True)
class JointLimits:
    """Box limits on joint positions (rad) and velocities (rad/s)."""

    q_min: np.ndarray
    q_max: np.ndarray
    qdot_min: np.ndarray
    qdot_max: np.ndarray

    def __post_init__(self):
        for name in ("q_min", "q_max", "qdot_min", "qdot_max"):
            v = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if v.shape != (N_JOINTS,):
                raise ValueError(f"{name} must have shape ({N_JOINTS},)")
            object.__setattr__(self, name, v)
        if not np.all(self.q_min < self.q_max):
            raise ValueError("q_min must be < q_max element-wise")
        if not (np.all(self.qdot_min < 0.0) and np.all(self.qdot_max > 0.0)):
            raise ValueError("velocity limits must straddle zero")

    @classmethod
    def ur10e(cls):
        """UR10e data-sheet limits: +/-360 deg positions, 120/180 deg/s speeds."""
        two_pi = 2.0 * np.pi
        qd = np.array([2.0944, 2.0944, 3.1416, 3.1416, 3.1416, 3.1416])
        return cls(-two_pi * np.ones(6), two_pi * np.ones(6), -qd, qd)


@dataclass(frozen=True)
class EePose:
    """Tool pose: Cartesian position p (m) and ZYZ Euler angles phi (rad)."""

    p: np.ndarray
    phi: np.ndarray


def euler_zyz(R):
    """ZYZ Euler angles of a rotation matrix.

    The middle angle is taken in [0, pi]; at the beta = 0 or pi gimbal lock
    the third angle is set to zero.
    """
    beta = np.arctan2(np.hypot(R[0, 2], R[1, 2]), R[2, 2])
    if np.sin(beta) > 1e-12:
        alpha = np.arctan2(R[1, 2], R[0, 2])
        gamma = np.arctan2(R[2, 1], -R[2, 0])
    else:
        gamma = 0.0
        if R[2, 2] > 0:
            alpha = np.arctan2(R[1, 0], R[0, 0])
        else:
            alpha = np.arctan2(-R[1, 0], -R[0, 0])
    return np.array([alpha, beta, gamma])


def fk_transform(dh: DhParameters, q):
    """4x4 base-to-tool transform."""
    return backend.fk_transform(dh.table, np.asarray(q, dtype=np.float64))


def forward_kinematics(dh: DhParameters, q) -> EePose:
    """Tool pose from the chained product of the six joint transforms."""
    T = fk_transform(dh, q)
    return EePose(p=T[:3, 3].copy(), phi=euler_zyz(T[:3, :3]))


def position_jacobian(dh: DhParameters, q):
    """(3, 6) matrix of tool-position derivatives w.r.t. joint angles."""
    return backend.position_jacobian(dh.table, np.asarray(q, dtype=np.float64))


def inverse_kinematics(
    dh: DhParameters,
    target_p,
    seed,
    limits: JointLimits,
    tol=1e-7,
    max_iters=200,
    damping=1e-3,
    joint_weights=None,
):
    """Damped-least-squares IK for the tool position.

    Iterates dq = J^T (J J^T + damping^2 I)^-1 r from ``seed``, clamping to
    the position limits each step, until ||r|| <= tol.  ``joint_weights``
    scales per-joint motion (larger weight moves less), keeping the solution
    near the seed's branch.

    Raises:
        IkError: residual still above ``tol`` after ``max_iters`` steps.
    """
    target = np.asarray(target_p, dtype=np.float64)
    q = np.array(seed, dtype=np.float64)
    if joint_weights is None:
        w_inv = np.ones(N_JOINTS)
    else:
        w_inv = 1.0 / np.asarray(joint_weights, dtype=np.float64)
    lam2 = damping * damping
    max_step = 0.3  # rad, keeps the linearization honest far from the target
    for _ in range(max_iters):
        r = target - backend.fk_position(dh.table, q)
        if np.linalg.norm(r) <= tol:
            return q
        J = backend.position_jacobian(dh.table, q) * w_inv
        A = J @ J.T + lam2 * np.eye(3)
        dq = w_inv * (J.T @ np.linalg.solve(A, r))
        step = np.linalg.norm(dq)
        if step > max_step:
            dq *= max_step / step
        q = np.clip(q + dq, limits.q_min, limits.q_max)
    r = target - backend.fk_position(dh.table, q)
    raise IkError(
        f"IK residual {np.linalg.norm(r):.3e} m above tolerance {tol:.1e} "
        f"after {max_iters} iterations"
    )


def plant_step(q, u, ts, limits: JointLimits):
    """Forward-Euler plant update with a hard clamp at the position limits."""
    q_next = np.asarray(q, dtype=np.float64) + ts * np.asarray(u, dtype=np.float64)
    return np.clip(q_next, limits.q_min, limits.q_max)
