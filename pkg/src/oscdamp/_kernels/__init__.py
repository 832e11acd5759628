"""Quadrature kernel backend selection.

Imports the compiled Cython kernels when available and falls back to the
numpy reference implementation otherwise.  Set OSCDAMP_KERNEL=numpy or
OSCDAMP_KERNEL=compiled to force a backend (forcing "compiled" raises if the
extension is missing).  Both backends implement the same contract and agree
to within accumulation-order rounding (~1e-12 relative).
"""

from __future__ import annotations

import os

_requested = os.environ.get("OSCDAMP_KERNEL", "auto").strip().lower()

if _requested in ("numpy", "python", "fallback"):
    from . import numpy_ref as _impl
elif _requested in ("auto", "", "compiled", "c"):
    try:
        from . import _quadcore as _impl  # type: ignore[no-redef]
    except ImportError:
        if _requested in ("compiled", "c"):
            raise ImportError(
                "OSCDAMP_KERNEL=compiled requested but the extension is not built"
            )
        from . import numpy_ref as _impl  # type: ignore[no-redef]
else:
    raise ValueError(f"unknown OSCDAMP_KERNEL value: {_requested!r}")

tensor_h_grad = _impl.tensor_h_grad
mc_h_grad = _impl.mc_h_grad
BACKEND = _impl.NAME


def get_backend(name: str | None = None):
    """Return a kernel module by name ("numpy" or "compiled"); default active."""
    if name is None:
        return _impl
    name = name.lower()
    if name in ("numpy", "python", "fallback"):
        from . import numpy_ref

        return numpy_ref
    if name in ("compiled", "c"):
        from . import _quadcore

        return _quadcore
    raise ValueError(f"unknown kernel backend: {name!r}")
