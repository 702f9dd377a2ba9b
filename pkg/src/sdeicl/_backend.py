"""Select the compiled kernels when importable, the numpy fallback otherwise."""

import os

from . import _fallback

fallback = _fallback

if os.environ.get("SDEICL_PURE_PYTHON", "") not in ("", "0"):
    kernels = _fallback
else:
    try:
        from . import _kernels as kernels
    except ImportError:  # extension not built
        kernels = _fallback

BACKEND = kernels.NAME
