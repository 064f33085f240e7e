"""Select the IPFP kernel at import time.

The compiled extension is used when it is importable, unless the
environment variable ``OTMATCH_BACKEND`` is set to ``python``.
"""
import os

BACKEND = "python"
if os.environ.get("OTMATCH_BACKEND", "").lower() != "python":
    try:
        from ._kernels import ipfp2
        BACKEND = "compiled"
    except ImportError:  # pragma: no cover - depends on the build
        pass
if BACKEND == "python":
    from ._fallback import ipfp2

__all__ = ["BACKEND", "ipfp2"]
