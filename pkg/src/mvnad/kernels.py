"""Backend selection for the hot kernels.

The compiled extension is used when importable; set ``MVNAD_PURE_PYTHON=1``
to force the numpy fallback.
"""

from __future__ import annotations

import os

from mvnad import _fallback

if os.environ.get("MVNAD_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from mvnad import _ext as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"

pcg32_fill = _impl.pcg32_fill
label_components = _impl.label_components
ps_solve = _impl.ps_solve

__all__ = ["BACKEND", "pcg32_fill", "label_components", "ps_solve"]
