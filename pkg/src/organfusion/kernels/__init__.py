"""Hot detection kernels with a compiled core and a pure-Python fallback.

The compiled extension ``_ckernels`` is used when importable; otherwise the
functions come from ``_pykernels``. ``BACKEND`` names the active one.
"""

from __future__ import annotations

from . import _pykernels

try:
    from . import _ckernels as _active
except ImportError:  # extension not built
    _active = _pykernels

BACKEND: str = _active.NAME

iou_matrix = _active.iou_matrix
nms_keep = _active.nms_keep
greedy_match = _active.greedy_match
interpolated_precision = _active.interpolated_precision


def available_backends() -> dict:
    """Map backend name to module for every backend that imports."""
    backends = {_pykernels.NAME: _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        backends[_ckernels.NAME] = _ckernels
    return backends
