"""Select the compiled kernel extension when present, else the numpy fallback.

Set KEMENY1D_PURE=1 to force the fallback (used by the backend-comparison
benchmark and tests).
"""

from __future__ import annotations

import os

_force_pure = os.environ.get("KEMENY1D_PURE", "").strip() not in ("", "0")

if not _force_pure:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _pure as _impl
else:
    from . import _pure as _impl

COMPILED: bool = bool(getattr(_impl, "COMPILED", False))
NAME: str = "compiled" if COMPILED else "pure-python"

eval_program = _impl.eval_program
eval_program_scalar = _impl.eval_program_scalar
em_step = _impl.em_step
