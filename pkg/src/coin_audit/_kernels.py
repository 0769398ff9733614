"""Pick the compiled Merkle kernels when available, else the hashlib fallback.

Set ``COIN_AUDIT_PURE=1`` to force the fallback.
"""
import os

from . import _merkle_py

python_kernels = _merkle_py

if os.environ.get("COIN_AUDIT_PURE"):
    compiled_kernels = None
else:
    try:
        from . import _merkle_ext as compiled_kernels
    except ImportError:
        compiled_kernels = None

active = compiled_kernels or python_kernels
BACKEND = active.BACKEND


def get(backend=None):
    """Kernel module by name (``"cython"``, ``"python"``) or the active one."""
    if backend in (None, "auto"):
        return active
    if backend == "python":
        return python_kernels
    if backend == "cython":
        if compiled_kernels is None:
            raise RuntimeError("compiled Merkle kernels are not built")
        return compiled_kernels
    raise ValueError(f"unknown kernel backend {backend!r}")
