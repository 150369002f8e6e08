"""Kernel backend selection.

The hot inner loop of the saddle-point solver is the cellwise proximal map
of the coupled cost, a safeguarded scalar root-find per cell.  A compiled
Cython core is used when available; a vectorized numpy fallback provides
the same contract.  Set ``MFGDUAL_PURE_PYTHON=1`` to force the fallback.
"""

import os

if os.environ.get("MFGDUAL_PURE_PYTHON", "") not in ("", "0"):
    from mfgdual._kernels import _fallback as _impl

    BACKEND = "python"
else:
    try:
        from mfgdual._kernels import _core as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        from mfgdual._kernels import _fallback as _impl

        BACKEND = "python"

prox_k_cells = _impl.prox_k_cells

__all__ = ["BACKEND", "prox_k_cells"]
