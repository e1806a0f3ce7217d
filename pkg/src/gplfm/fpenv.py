"""Scoped flush-to-zero / denormals-are-zero for dense factorizations.

Short force lengthscales give Gram matrices whose far-off-diagonal entries
underflow into the subnormal range, and LAPACK slows down several fold on
them.  Values below ~2.2e-308 are irrelevant next to O(1) kernel entries,
so factorizations run with FTZ/DAZ set in MXCSR and the previous state is
restored afterwards.  Outside x86-64, or without numba, this is a no-op.
"""

from __future__ import annotations

import contextlib
import platform

_FTZ_DAZ = 0x8040

try:
    if platform.machine().lower() not in ("x86_64", "amd64"):
        raise ImportError("MXCSR is x86 only")
    from llvmlite import ir
    from numba import njit, types
    from numba.core import cgutils
    from numba.extending import intrinsic

    def _mxcsr_fn(builder, name):
        fnty = ir.FunctionType(ir.VoidType(), [ir.IntType(8).as_pointer()])
        return cgutils.get_or_insert_function(builder.module, fnty, name)

    @intrinsic
    def _ldmxcsr(typingctx, val):
        def codegen(context, builder, sig, args):
            ptr = cgutils.alloca_once_value(builder, args[0])
            builder.call(_mxcsr_fn(builder, "llvm.x86.sse.ldmxcsr"), [builder.bitcast(ptr, ir.IntType(8).as_pointer())])
            return context.get_dummy_value()

        return types.void(types.uint32), codegen

    @intrinsic
    def _stmxcsr(typingctx):
        def codegen(context, builder, sig, args):
            ptr = cgutils.alloca_once(builder, ir.IntType(32))
            builder.call(_mxcsr_fn(builder, "llvm.x86.sse.stmxcsr"), [builder.bitcast(ptr, ir.IntType(8).as_pointer())])
            return builder.load(ptr)

        return types.uint32(), codegen

    @njit(cache=False)
    def _get():
        return _stmxcsr()

    @njit(cache=False)
    def _set(v):
        _ldmxcsr(v)

    _get()
    AVAILABLE = True
except Exception:  # pragma: no cover - depends on platform
    AVAILABLE = False


def get_mxcsr() -> int | None:
    return int(_get()) if AVAILABLE else None


@contextlib.contextmanager
def flush_denormals():
    """Run the body with FTZ and DAZ set, restoring MXCSR on exit."""
    if not AVAILABLE:
        yield
        return
    old = int(_get())
    _set(old | _FTZ_DAZ)
    try:
        yield
    finally:
        _set(old)
