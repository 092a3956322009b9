"""Select the compiled kernels when available, else the numpy fallback.

Set ``SOFTCUT_BACKEND=python`` to force the fallback.
"""
import logging
import os

from . import _fallback

log = logging.getLogger(__name__)

BACKEND = "python"
kernels = _fallback

if os.environ.get("SOFTCUT_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as kernels  # noqa: F811

        BACKEND = "compiled"
    except ImportError:  # extension not built
        log.debug("compiled kernels unavailable, using numpy fallback")
        kernels = _fallback
