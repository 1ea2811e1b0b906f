"""Numpy implementations of the hot kinematics kernels.

The compiled extension ``windtune._kernels._core`` provides the same
functions with identical signatures; ``windtune.backend`` picks one at
import time.  All functions take a DH table as a (n, 4) float64 array with
columns ``a, alpha, d, theta_offset`` (SI units, radians) and treat joint
``j`` as a revolute joint rotating about the z axis of frame ``j``.
"""

import numpy as np

BACKEND_NAME = "pure"


def dh_transform(a, alpha, d, theta):
    """Homogeneous transform of one link (standard DH convention)."""
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(alpha), np.sin(alpha)
    return np.array(
        [
            [ct, -st * ca, st * sa, a * ct],
            [st, ct * ca, -ct * sa, a * st],
            [0.0, sa, ca, d],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


def fk_transform(dh, q):
    """Base-to-tool homogeneous transform for joint angles ``q``."""
    T = np.eye(4)
    for j in range(dh.shape[0]):
        T = T @ dh_transform(dh[j, 0], dh[j, 1], dh[j, 2], dh[j, 3] + q[j])
    return T


def fk_position(dh, q):
    """Tool position only."""
    return fk_transform(dh, q)[:3, 3].copy()


def frame_origins_axes(dh, q):
    """Origins and z axes of frames 0..n (frame 0 is the base).

    Returns (origins, zaxes), each (n + 1, 3).  Joint ``j`` (0-based)
    rotates about ``zaxes[j]`` through ``origins[j]``.
    """
    n = dh.shape[0]
    origins = np.zeros((n + 1, 3))
    zaxes = np.zeros((n + 1, 3))
    zaxes[0, 2] = 1.0
    T = np.eye(4)
    for j in range(n):
        T = T @ dh_transform(dh[j, 0], dh[j, 1], dh[j, 2], dh[j, 3] + q[j])
        origins[j + 1] = T[:3, 3]
        zaxes[j + 1] = T[:3, 2]
    return origins, zaxes


def position_jacobian(dh, q):
    """Geometric position Jacobian, (3, n): column j = z_j x (p - o_j)."""
    n = dh.shape[0]
    origins, zaxes = frame_origins_axes(dh, q)
    p = origins[n]
    J = np.empty((3, n))
    for j in range(n):
        J[:, j] = np.cross(zaxes[j], p - origins[j])
    return J


def rollout(dh, q0, U, ts):
    """Open-loop joint/position prediction over a horizon.

    ``U`` is (N, n).  Returns (Q, P) with Q[k] = q0 + ts * sum_{j<k} U[j]
    (so Q[0] = q0) and P[k] the tool position at Q[k].
    """
    N = U.shape[0]
    n = q0.shape[0]
    Q = np.empty((N, n))
    P = np.empty((N, 3))
    Q[0] = q0
    for k in range(1, N):
        Q[k] = Q[k - 1] + ts * U[k - 1]
    for k in range(N):
        P[k] = fk_position(dh, Q[k])
    return Q, P


def rollout_with_jacobian(dh, q0, U, ts):
    """Like :func:`rollout` but also returns the (N, 3, n) position Jacobians."""
    N = U.shape[0]
    n = q0.shape[0]
    Q = np.empty((N, n))
    P = np.empty((N, 3))
    J = np.empty((N, 3, n))
    Q[0] = q0
    for k in range(1, N):
        Q[k] = Q[k - 1] + ts * U[k - 1]
    for k in range(N):
        origins, zaxes = frame_origins_axes(dh, Q[k])
        p = origins[n]
        P[k] = p
        for j in range(n):
            J[k, :, j] = np.cross(zaxes[j], p - origins[j])
    return Q, P, J
