"""Winding-core geometry and reference-path generation.

The winding core is a set of vertices and edges in the robot base frame; a
winding sequence orders the vertex visits.  ``densify`` turns the sequence
into a time-parameterized Cartesian path sampled every Ts along the
polyline, slowing down near corners and attaching tapered vertex weights.
``plan_open_loop`` then smooths that raw path through the kinematic model
with a receding-horizon solve, producing the tracking reference.
"""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from windtune import nmpc
from windtune.robot import JointLimits


class EmptySequenceError(ValueError):
    """Winding sequence has fewer than two entries."""


class PlanningError(RuntimeError):
    """An inner solve of the open-loop planner failed."""


@dataclass(frozen=True)
class Core:
    """Winding core: vertices (m, base frame), edges, and its frame offset."""

    vertices: np.ndarray
    edges: tuple
    offset: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 4 or v.shape[1] != 3:
            raise ValueError("core needs >= 4 vertices of dimension 3")
        for i, j in self.edges:
            if not (0 <= i < v.shape[0] and 0 <= j < v.shape[0]):
                raise ValueError(f"edge ({i}, {j}) references a missing vertex")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=np.float64))


def make_tetrahedron(edge_length, offset=(0.0, 0.0, 0.0)) -> Core:
    """Regular tetrahedron with one face parallel to the base plane.

    The centroid sits at ``offset``; all six edges have length
    ``edge_length``.
    """
    if edge_length <= 0:
        raise ValueError("edge_length must be positive")
    a = float(edge_length)
    offset = np.asarray(offset, dtype=np.float64)
    # base face is an equilateral triangle at z = -h/4, apex at z = 3h/4
    circ = a / np.sqrt(3.0)  # circumradius of the base face
    h = a * np.sqrt(2.0 / 3.0)  # tetrahedron height
    angles = np.array([0.0, 2.0 * np.pi / 3.0, 4.0 * np.pi / 3.0])
    verts = np.zeros((4, 3))
    verts[:3, 0] = circ * np.cos(angles)
    verts[:3, 1] = circ * np.sin(angles)
    verts[:3, 2] = -h / 4.0
    verts[3] = (0.0, 0.0, 3.0 * h / 4.0)
    verts -= verts.mean(axis=0)  # exact centroid at the origin
    edges = tuple((i, j) for i in range(4) for j in range(i + 1, 4))
    return Core(vertices=verts + offset, edges=edges, offset=offset)


@dataclass(frozen=True)
class WindingSequence:
    """Ordered vertex visits; repeated ``repetitions`` times end to end."""

    indices: tuple
    repetitions: int = 1

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(idx) < 2:
            raise EmptySequenceError("winding sequence needs >= 2 vertices")
        if any(a == b for a, b in zip(idx, idx[1:])):
            raise ValueError("consecutive sequence entries must differ")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        object.__setattr__(self, "indices", idx)

    def expanded(self):
        """Vertex index list with winding passes concatenated."""
        out = list(self.indices)
        for _ in range(self.repetitions - 1):
            nxt = list(self.indices)
            if nxt[0] == out[-1]:
                nxt = nxt[1:]
            out.extend(nxt)
        return out


@dataclass(frozen=True)
class CornerConfig:
    """Corner refinement: slow to ``slowdown`` x speed within ``window`` m."""

    window: float = 0.005
    slowdown: float = 0.25

    def __post_init__(self):
        if not (0.0 < self.slowdown <= 1.0):
            raise ValueError("slowdown must be in (0, 1]")
        if self.window < 0.0:
            raise ValueError("window must be >= 0")


@dataclass(frozen=True)
class TaperConfig:
    """Vertex weights taper linearly from ``peak`` to 0 over ``window`` m."""

    peak: float = 1.0
    window: float = 0.01

    def __post_init__(self):
        if self.peak < 0.0 or self.window < 0.0:
            raise ValueError("taper peak and window must be >= 0")


@dataclass
class ReferencePath:
    """Dense time-parameterized Cartesian reference.

    ``vertex_xyz[k]`` is the core vertex the taper weight at sample k refers
    to (the nearest waypoint along the arc).
    """

    t: np.ndarray
    points: np.ndarray
    vertex_weight: np.ndarray
    is_corner: np.ndarray
    vertex_xyz: np.ndarray

    def __post_init__(self):
        n = len(self.t)
        if not (
            self.points.shape == (n, 3)
            and self.vertex_weight.shape == (n,)
            and self.is_corner.shape == (n,)
            and self.vertex_xyz.shape == (n, 3)
        ):
            raise ValueError("reference path columns must have equal length")

    def __len__(self):
        return len(self.t)

    def window(self, start, horizon):
        """(horizon, 3) reference slice; the final point repeats at the tail."""
        return _window(self.points, start, horizon)

    def vertex_window(self, start, horizon):
        """Matching slices of vertex points and taper weights."""
        return (
            _window(self.vertex_xyz, start, horizon),
            _window(self.vertex_weight, start, horizon),
        )

    def save_csv(self, path):
        with open(path, "w") as fh:
            fh.write("t,px,py,pz,vertex_weight,is_corner\n")
            for k in range(len(self)):
                fh.write(
                    f"{self.t[k]:.17g},{self.points[k, 0]:.17g},"
                    f"{self.points[k, 1]:.17g},{self.points[k, 2]:.17g},"
                    f"{self.vertex_weight[k]:.17g},{int(self.is_corner[k])}\n"
                )

    @classmethod
    def load_csv(cls, path, vertex_xyz=None):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        n = data.shape[0]
        return cls(
            t=data[:, 0],
            points=data[:, 1:4],
            vertex_weight=data[:, 4],
            is_corner=data[:, 5].astype(bool),
            vertex_xyz=data[:, 1:4].copy() if vertex_xyz is None else vertex_xyz,
        )


def _window(arr, start, horizon):
    n = arr.shape[0]
    if start + horizon <= n:
        return arr[start : start + horizon]
    head = arr[start:n]
    tail = np.repeat(arr[-1:], start + horizon - n, axis=0)
    return np.concatenate([head, tail], axis=0)


def densify(
    core: Core,
    seq: WindingSequence,
    ts,
    speed,
    corner: CornerConfig = CornerConfig(),
    taper: TaperConfig = TaperConfig(),
) -> ReferencePath:
    """Sample the winding polyline at arc increments of local_speed * ts.

    Within ``corner.window`` (arc distance) of an interior waypoint the local
    speed is ``speed * corner.slowdown``.  Every waypoint gets an exact
    sample, so consecutive samples never straddle a corner.
    """
    if speed <= 0 or ts <= 0:
        raise ValueError("speed and ts must be positive")
    visits = seq.expanded()
    way = core.vertices[visits]  # (w, 3) waypoints
    seg = np.diff(way, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    if np.any(seg_len == 0.0):
        raise ValueError("zero-length segment in winding sequence")
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    interior = cum[1:-1]  # arc positions of direction changes
    nominal = speed * ts
    snap = 1e-9 * nominal

    def near_corner(s):
        return interior.size > 0 and np.min(np.abs(interior - s)) <= corner.window

    samples = [0.0]
    s = 0.0
    nxt = 1  # next waypoint index to land on
    while s < total - snap:
        factor = corner.slowdown if near_corner(s) else 1.0
        s_new = s + nominal * factor
        if s_new >= cum[nxt] - snap:
            s_new = cum[nxt]
            nxt += 1
        samples.append(s_new)
        s = s_new
    svals = np.asarray(samples)

    n = len(svals)
    seg_idx = np.minimum(np.searchsorted(cum, svals, side="right") - 1, len(seg_len) - 1)
    local = svals - cum[seg_idx]
    points = way[seg_idx] + (local / seg_len[seg_idx])[:, None] * seg[seg_idx]

    # taper weight relative to the nearest waypoint along the arc
    d_all = np.abs(svals[:, None] - cum[None, :])
    nearest = np.argmin(d_all, axis=1)
    d_near = d_all[np.arange(n), nearest]
    if taper.window > 0.0:
        w = taper.peak * np.maximum(0.0, 1.0 - d_near / taper.window)
    else:
        w = np.where(d_near == 0.0, taper.peak, 0.0)
    vertex_xyz = way[nearest]

    if interior.size > 0:
        is_corner = np.min(np.abs(svals[:, None] - interior[None, :]), axis=1) <= corner.window
    else:
        is_corner = np.zeros(n, dtype=bool)

    return ReferencePath(
        t=np.arange(n) * float(ts),
        points=points,
        vertex_weight=w,
        is_corner=is_corner,
        vertex_xyz=vertex_xyz,
    )


@dataclass(frozen=True)
class PlannerWeights:
    """Fixed weights of the open-loop smoothing pass."""

    q_diag: float = 2.0e4
    r_diag: float = 5.0e-3
    vertex_gain: float = 1.0e3
    w_align: float = 0.0  # accepted for config compatibility; not modeled

    def __post_init__(self):
        if self.w_align != 0.0:
            warnings.warn(
                "thread-alignment weight w_align is accepted but ignored "
                "(no process model)",
                stacklevel=3,
            )


def plan_open_loop(
    model: nmpc.DhChainModel,
    limits: JointLimits,
    path: ReferencePath,
    weights: PlannerWeights,
    q0,
    horizon: int = 10,
    solver_cfg: nmpc.NmpcConfig | None = None,
):
    """Smooth the raw path through the kinematic model.

    Runs the position + vertex-tracking + smoothness problem over the whole
    path in receding windows from joint state ``q0`` and returns the executed
    joint trajectory together with its tool positions as a new
    ReferencePath (the tracking reference).

    Raises:
        PlanningError: an inner window solve stalled.
    """
    if len(path) == 0:
        raise ValueError("reference path is empty")
    cfg = solver_cfg or nmpc.NmpcConfig(
        limits=limits,
        horizon=horizon,
        ts=float(path.t[1] - path.t[0]) if len(path) > 1 else 0.008,
    )
    qw = np.full(3, weights.q_diag)
    rw = np.full(6, weights.r_diag)
    n = len(path)
    joints = np.empty((n, 6))
    tool = np.empty((n, 3))
    q = np.asarray(q0, dtype=np.float64).copy()
    u_prev = np.zeros(6)
    U_warm = np.zeros((cfg.horizon, 6))
    for k in range(n):
        refs = path.window(k, cfg.horizon)
        vpts, vw = path.vertex_window(k, cfg.horizon)
        sol = nmpc.solve_cftoc_arrays(
            model,
            cfg,
            qw,
            rw,
            q,
            u_prev,
            refs,
            U0=U_warm,
            vertex_points=vpts,
            vertex_weights=weights.vertex_gain * vw,
        )
        if sol.status == "stalled":
            raise PlanningError(f"planner window solve stalled at sample {k}")
        joints[k] = q
        tool[k] = model.output(q)
        u_prev = sol.U_star[0]
        U_warm = np.vstack([sol.U_star[1:], sol.U_star[-1:]])
        q = np.clip(q + cfg.ts * u_prev, limits.q_min, limits.q_max)
    smoothed = ReferencePath(
        t=path.t.copy(),
        points=tool,
        vertex_weight=path.vertex_weight.copy(),
        is_corner=path.is_corner.copy(),
        vertex_xyz=path.vertex_xyz.copy(),
    )
    return joints, smoothed


def core_from_config(cfg: dict):
    """Build (Core, WindingSequence, densify kwargs) from a config mapping."""
    core = make_tetrahedron(cfg["edge_length_m"], cfg.get("offset_m", (0, 0, 0)))
    seq = WindingSequence(
        tuple(cfg["sequence"]), repetitions=int(cfg.get("repetitions", 1))
    )
    corner = CornerConfig(**cfg.get("corner", {}))
    taper = TaperConfig(**cfg.get("taper", {}))
    return core, seq, dict(speed=cfg["speed_mps"], corner=corner, taper=taper)


def load_core_config(path):
    with open(path) as fh:
        return json.load(fh)
