"""Pick the compiled kernels when importable, else the NumPy fallback.

Set ``REMORA_BACKEND=python`` to force the fallback.
"""

import os

from . import _fallback
from .errors import InvalidConfigError

python = _fallback
compiled = None

if os.environ.get("REMORA_BACKEND", "auto").lower() != "python":
    try:
        from . import _kernels as compiled
    except ImportError:  # extension not built
        compiled = None

kernels = compiled if compiled is not None else _fallback
NAME = "compiled" if compiled is not None else "python"


def get(name="auto"):
    """Return a kernel namespace: ``"auto"``, ``"compiled"`` or ``"python"``."""
    if name == "auto":
        return kernels
    if name == "python":
        return _fallback
    if name == "compiled":
        if compiled is None:
            raise ImportError("compiled kernels are not built; run `pip install -e .`")
        return compiled
    raise InvalidConfigError(f"unknown backend {name!r}")
