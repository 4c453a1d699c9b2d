"""Kernel selection: compiled extension if available, pure Python otherwise.

Library code imports the kernel through this module so the two
implementations stay interchangeable; ``use("python")`` forces the
fallback (mainly for benchmarks and parity tests).
"""

from __future__ import annotations

from . import _core_py

try:
    from . import _core

    _HAVE_COMPILED = True
except ImportError:  # pragma: no cover - depends on the build environment
    _core = None
    _HAVE_COMPILED = False

SYS_EXTENDED = _core_py.SYS_EXTENDED
SYS_ADJOINT = _core_py.SYS_ADJOINT
SYS_VARIATIONAL = _core_py.SYS_VARIATIONAL

_impl = _core if _HAVE_COMPILED else _core_py


def backend_name() -> str:
    return "compiled" if _impl is _core and _HAVE_COMPILED else "python"


def have_compiled() -> bool:
    return _HAVE_COMPILED


def use(name: str) -> None:
    """Select the active kernel: ``"compiled"``, ``"python"`` or ``"auto"``."""
    global _impl
    if name == "python":
        _impl = _core_py
    elif name == "compiled":
        if not _HAVE_COMPILED:
            raise RuntimeError("compiled kernel is not available")
        _impl = _core
    elif name == "auto":
        _impl = _core if _HAVE_COMPILED else _core_py
    else:
        raise ValueError(f"unknown backend {name!r}")


def integrate_endpoint(kind, a, b, om, r, lmax, y0, t_total, rtol, atol, max_step, esc_sq):
    return _impl.integrate_endpoint(kind, a, b, om, r, lmax, y0, t_total, rtol, atol, max_step, esc_sq)


def ensemble_endpoints(a, b, om, r, lmax, Y0, t_total, rtol, atol, max_step, esc_sq):
    return _impl.ensemble_endpoints(a, b, om, r, lmax, Y0, t_total, rtol, atol, max_step, esc_sq)


def ensemble_samples(a, b, om, r, lmax, Y0, t_samples, rtol, atol, max_step, esc_sq):
    return _impl.ensemble_samples(a, b, om, r, lmax, Y0, t_samples, rtol, atol, max_step, esc_sq)
