# cython: language_level=3
"""Compiled kinematics kernels (same surface as windtune._kernels.pure)."""

from libc.math cimport cos, sin

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "compiled"


cdef inline void _link_transform(double a, double alpha, double d,
                                 double theta, double[:, ::1] T) nogil:
    cdef double ct = cos(theta)
    cdef double st = sin(theta)
    cdef double ca = cos(alpha)
    cdef double sa = sin(alpha)
    T[0, 0] = ct
    T[0, 1] = -st * ca
    T[0, 2] = st * sa
    T[0, 3] = a * ct
    T[1, 0] = st
    T[1, 1] = ct * ca
    T[1, 2] = -ct * sa
    T[1, 3] = a * st
    T[2, 0] = 0.0
    T[2, 1] = sa
    T[2, 2] = ca
    T[2, 3] = d
    T[3, 0] = 0.0
    T[3, 1] = 0.0
    T[3, 2] = 0.0
    T[3, 3] = 1.0


cdef inline void _matmul4(double[:, ::1] A, double[:, ::1] B,
                          double[:, ::1] out) nogil:
    cdef int i, j, k
    cdef double s
    for i in range(4):
        for j in range(4):
            s = 0.0
            for k in range(4):
                s += A[i, k] * B[k, j]
            out[i, j] = s


cdef void _chain(double[:, ::1] dh, double[:] q, double[:, ::1] T,
                 double[:, ::1] link, double[:, ::1] tmp) nogil:
    """T <- product of the n link transforms; link/tmp are scratch."""
    cdef int n = dh.shape[0]
    cdef int i, j, jj
    for i in range(4):
        for j in range(4):
            T[i, j] = 1.0 if i == j else 0.0
    for jj in range(n):
        _link_transform(dh[jj, 0], dh[jj, 1], dh[jj, 2], dh[jj, 3] + q[jj], link)
        _matmul4(T, link, tmp)
        T[:, :] = tmp
    return


cdef void _origins_axes(double[:, ::1] dh, double[:] q,
                        double[:, ::1] origins, double[:, ::1] zaxes,
                        double[:, ::1] T, double[:, ::1] link,
                        double[:, ::1] tmp) nogil:
    cdef int n = dh.shape[0]
    cdef int i, j, jj
    for i in range(4):
        for j in range(4):
            T[i, j] = 1.0 if i == j else 0.0
    origins[0, 0] = 0.0
    origins[0, 1] = 0.0
    origins[0, 2] = 0.0
    zaxes[0, 0] = 0.0
    zaxes[0, 1] = 0.0
    zaxes[0, 2] = 1.0
    for jj in range(n):
        _link_transform(dh[jj, 0], dh[jj, 1], dh[jj, 2], dh[jj, 3] + q[jj], link)
        _matmul4(T, link, tmp)
        T[:, :] = tmp
        for i in range(3):
            origins[jj + 1, i] = T[i, 3]
            zaxes[jj + 1, i] = T[i, 2]
    return


cdef inline void _jac_columns(double[:, ::1] origins, double[:, ::1] zaxes,
                              int n, double[:, ::1] J) nogil:
    cdef int j
    cdef double rx, ry, rz
    for j in range(n):
        rx = origins[n, 0] - origins[j, 0]
        ry = origins[n, 1] - origins[j, 1]
        rz = origins[n, 2] - origins[j, 2]
        J[0, j] = zaxes[j, 1] * rz - zaxes[j, 2] * ry
        J[1, j] = zaxes[j, 2] * rx - zaxes[j, 0] * rz
        J[2, j] = zaxes[j, 0] * ry - zaxes[j, 1] * rx


def dh_transform(double a, double alpha, double d, double theta):
    """Homogeneous transform of one link (standard DH convention)."""
    out = np.empty((4, 4))
    cdef double[:, ::1] T = out
    _link_transform(a, alpha, d, theta, T)
    return out


def fk_transform(dh, q):
    """Base-to-tool homogeneous transform for joint angles ``q``."""
    cdef double[:, ::1] dh_v = np.ascontiguousarray(dh, dtype=np.float64)
    cdef double[:] q_v = np.ascontiguousarray(q, dtype=np.float64)
    out = np.empty((4, 4))
    cdef double[:, ::1] T = out
    link = np.empty((4, 4))
    tmp = np.empty((4, 4))
    cdef double[:, ::1] link_v = link
    cdef double[:, ::1] tmp_v = tmp
    _chain(dh_v, q_v, T, link_v, tmp_v)
    return out


def fk_position(dh, q):
    """Tool position only."""
    return fk_transform(dh, q)[:3, 3].copy()


def frame_origins_axes(dh, q):
    """Origins and z axes of frames 0..n (frame 0 is the base)."""
    cdef double[:, ::1] dh_v = np.ascontiguousarray(dh, dtype=np.float64)
    cdef double[:] q_v = np.ascontiguousarray(q, dtype=np.float64)
    cdef int n = dh_v.shape[0]
    origins = np.zeros((n + 1, 3))
    zaxes = np.zeros((n + 1, 3))
    cdef double[:, ::1] o_v = origins
    cdef double[:, ::1] z_v = zaxes
    T = np.empty((4, 4))
    link = np.empty((4, 4))
    tmp = np.empty((4, 4))
    cdef double[:, ::1] T_v = T
    cdef double[:, ::1] link_v = link
    cdef double[:, ::1] tmp_v = tmp
    _origins_axes(dh_v, q_v, o_v, z_v, T_v, link_v, tmp_v)
    return origins, zaxes


def position_jacobian(dh, q):
    """Geometric position Jacobian, (3, n): column j = z_j x (p - o_j)."""
    cdef double[:, ::1] dh_v = np.ascontiguousarray(dh, dtype=np.float64)
    cdef double[:] q_v = np.ascontiguousarray(q, dtype=np.float64)
    cdef int n = dh_v.shape[0]
    origins = np.zeros((n + 1, 3))
    zaxes = np.zeros((n + 1, 3))
    out = np.empty((3, n))
    cdef double[:, ::1] o_v = origins
    cdef double[:, ::1] z_v = zaxes
    cdef double[:, ::1] J_v = out
    T = np.empty((4, 4))
    link = np.empty((4, 4))
    tmp = np.empty((4, 4))
    cdef double[:, ::1] T_v = T
    cdef double[:, ::1] link_v = link
    cdef double[:, ::1] tmp_v = tmp
    _origins_axes(dh_v, q_v, o_v, z_v, T_v, link_v, tmp_v)
    _jac_columns(o_v, z_v, n, J_v)
    return out


def rollout(dh, q0, U, ts):
    """Open-loop joint/position prediction over a horizon.

    ``U`` is (N, n).  Returns (Q, P) with Q[k] = q0 + ts * sum_{j<k} U[j]
    (so Q[0] = q0) and P[k] the tool position at Q[k].
    """
    cdef double[:, ::1] dh_v = np.ascontiguousarray(dh, dtype=np.float64)
    cdef double[:] q0_v = np.ascontiguousarray(q0, dtype=np.float64)
    cdef double[:, ::1] U_v = np.ascontiguousarray(U, dtype=np.float64)
    cdef double ts_c = ts
    cdef int N = U_v.shape[0]
    cdef int n = q0_v.shape[0]
    Q = np.empty((N, n))
    P = np.empty((N, 3))
    cdef double[:, ::1] Q_v = Q
    cdef double[:, ::1] P_v = P
    T = np.empty((4, 4))
    link = np.empty((4, 4))
    tmp = np.empty((4, 4))
    cdef double[:, ::1] T_v = T
    cdef double[:, ::1] link_v = link
    cdef double[:, ::1] tmp_v = tmp
    cdef int i, k
    with nogil:
        for i in range(n):
            Q_v[0, i] = q0_v[i]
        for k in range(1, N):
            for i in range(n):
                Q_v[k, i] = Q_v[k - 1, i] + ts_c * U_v[k - 1, i]
        for k in range(N):
            _chain(dh_v, Q_v[k], T_v, link_v, tmp_v)
            for i in range(3):
                P_v[k, i] = T_v[i, 3]
    return Q, P


def rollout_with_jacobian(dh, q0, U, ts):
    """Like :func:`rollout` but also returns the (N, 3, n) position Jacobians."""
    cdef double[:, ::1] dh_v = np.ascontiguousarray(dh, dtype=np.float64)
    cdef double[:] q0_v = np.ascontiguousarray(q0, dtype=np.float64)
    cdef double[:, ::1] U_v = np.ascontiguousarray(U, dtype=np.float64)
    cdef double ts_c = ts
    cdef int N = U_v.shape[0]
    cdef int n = q0_v.shape[0]
    Q = np.empty((N, n))
    P = np.empty((N, 3))
    J = np.empty((N, 3, n))
    origins = np.zeros((n + 1, 3))
    zaxes = np.zeros((n + 1, 3))
    cdef double[:, ::1] Q_v = Q
    cdef double[:, ::1] P_v = P
    cdef double[:, :, ::1] J_v = J
    cdef double[:, ::1] o_v = origins
    cdef double[:, ::1] z_v = zaxes
    T = np.empty((4, 4))
    link = np.empty((4, 4))
    tmp = np.empty((4, 4))
    cdef double[:, ::1] T_v = T
    cdef double[:, ::1] link_v = link
    cdef double[:, ::1] tmp_v = tmp
    cdef int i, k
    with nogil:
        for i in range(n):
            Q_v[0, i] = q0_v[i]
        for k in range(1, N):
            for i in range(n):
                Q_v[k, i] = Q_v[k - 1, i] + ts_c * U_v[k - 1, i]
        for k in range(N):
            _origins_axes(dh_v, Q_v[k], o_v, z_v, T_v, link_v, tmp_v)
            _jac_columns(o_v, z_v, n, J_v[k])
            for i in range(3):
                P_v[k, i] = o_v[n, i]
    return Q, P, J
