"""Hot inner-loop kernels: fused LSTM cell, batched IDM step, IDM simulation.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy versions in ``_pykernels`` are used. Set ``EDITFOLLOWER_PURE_PYTHON=1``
to force the fallback.
"""
from __future__ import annotations

import os

from . import _pykernels
from ._pykernels import ACC_MAX, ACC_MIN, IDM_CACHE_WIDTH, SPACING_FLOOR

_impl = _pykernels
BACKEND = "python"
if os.environ.get("EDITFOLLOWER_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels

lstm_cell_forward = _impl.lstm_cell_forward
lstm_cell_backward = _impl.lstm_cell_backward
idm_step_forward = _impl.idm_step_forward
idm_step_backward = _impl.idm_step_backward
idm_simulate = _impl.idm_simulate

__all__ = [
    "ACC_MAX", "ACC_MIN", "BACKEND", "IDM_CACHE_WIDTH", "SPACING_FLOOR",
    "lstm_cell_forward", "lstm_cell_backward",
    "idm_step_forward", "idm_step_backward", "idm_simulate",
]
