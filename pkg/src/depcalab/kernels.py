"""Backend selection for the hot loops.

The compiled extension is used when it imports; ``DEPCA_LAB_PURE=1``
forces the numpy fallback (useful for debugging and for the benchmark).
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if not os.environ.get("DEPCA_LAB_PURE"):
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

chain_products = _impl.chain_products
projected_sweep_forward = _impl.projected_sweep_forward
projected_sweep_backward = _impl.projected_sweep_backward
remote_variation = _impl.remote_variation

__all__ = [
    "BACKEND",
    "chain_products",
    "projected_sweep_forward",
    "projected_sweep_backward",
    "remote_variation",
]
