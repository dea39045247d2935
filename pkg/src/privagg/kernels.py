"""Kernel backend selection.

The compiled extension is used when it imports; setting ``PRIVAGG_PURE=1``
forces the pure-Python kernels (useful for benchmarking and debugging).
"""

from __future__ import annotations

import os

from privagg import _pykernels

if os.environ.get("PRIVAGG_PURE", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from privagg import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

dot = _impl.dot
vec_add = _impl.vec_add
vec_sub = _impl.vec_sub
vec_scale = _impl.vec_scale
poly_mul = _impl.poly_mul
poly_eval = _impl.poly_eval
extend_consecutive = _impl.extend_consecutive
run_circuit = _impl.run_circuit
bytes_to_field = _impl.bytes_to_field

OP_ADD = _pykernels.OP_ADD
OP_MULC = _pykernels.OP_MULC
OP_ADDC = _pykernels.OP_ADDC
OP_MUL = _pykernels.OP_MUL

__all__ = [
    "BACKEND", "dot", "vec_add", "vec_sub", "vec_scale", "poly_mul",
    "poly_eval", "extend_consecutive", "run_circuit", "bytes_to_field",
]
