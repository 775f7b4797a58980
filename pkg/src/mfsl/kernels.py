"""Hot-kernel dispatch: the compiled extension when importable, numpy otherwise.

Set ``MFSL_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

from . import _kernels_py as python_backend

compiled_backend = None
if not os.environ.get("MFSL_PURE_PYTHON"):
    try:
        from . import _ckernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

_active = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "compiled" if compiled_backend is not None else "python"

weno5_faces = _active.weno5_faces
sl_fluxes = _active.sl_fluxes
stencil_apply_1d = _active.stencil_apply_1d
stencil_adjoint_1d = _active.stencil_adjoint_1d
column_sums_1d = _active.column_sums_1d
spread_1d = _active.spread_1d
stencil_apply_2d = _active.stencil_apply_2d
stencil_adjoint_2d = _active.stencil_adjoint_2d
column_sums_2d = _active.column_sums_2d
spread_2d = _active.spread_2d
im2col_1d = _active.im2col_1d
im2col_2d = _active.im2col_2d
