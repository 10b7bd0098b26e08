"""Inner-loop kernels with a compiled core and a pure-numpy fallback.

The compiled extension is preferred when importable; set
``MPSLAM_FORCE_FALLBACK=1`` to force the numpy implementation. ``BACKEND``
reports which one is active.
"""

import os

if os.environ.get("MPSLAM_FORCE_FALLBACK"):
    from . import _fallback as _impl
    BACKEND = "fallback"
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]
        BACKEND = "compiled"
    except ImportError:
        from . import _fallback as _impl
        BACKEND = "fallback"

da_messages = _impl.da_messages
particle_log_weights = _impl.particle_log_weights

__all__ = ["BACKEND", "da_messages", "particle_log_weights"]
