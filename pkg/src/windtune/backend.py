"""Selects the kinematics kernel backend at import time.

Prefers the compiled extension; falls back to the numpy implementation when
the extension is missing or ``WINDTUNE_PURE=1`` is set.  Both backends expose
the same functions with identical semantics (see ``windtune._kernels.pure``).
"""

import os

from windtune._kernels import pure as _pure

if os.environ.get("WINDTUNE_PURE", "") == "1":
    _impl = _pure
else:
    try:
        from windtune._kernels import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _pure

BACKEND = _impl.BACKEND_NAME

dh_transform = _impl.dh_transform
fk_transform = _impl.fk_transform
fk_position = _impl.fk_position
frame_origins_axes = _impl.frame_origins_axes
position_jacobian = _impl.position_jacobian
rollout = _impl.rollout
rollout_with_jacobian = _impl.rollout_with_jacobian


def available_backends():
    """Names of the backends importable in this environment."""
    names = []
    try:
        from windtune._kernels import _core  # noqa: F401

        names.append("compiled")
    except ImportError:
        pass
    names.append("pure")
    return names


def get_backend(name):
    """Return the backend module for ``name`` ('compiled' or 'pure')."""
    if name == "pure":
        return _pure
    if name == "compiled":
        from windtune._kernels import _core

        return _core
    raise ValueError(f"unknown backend {name!r}")
