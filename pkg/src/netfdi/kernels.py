"""Kernel selection: compiled extension when available, numpy fallback otherwise.

Set ``NETFDI_PURE=1`` to force the fallback.
"""
import os
from dataclasses import dataclass

import numpy as np

from .graph_core import incidence_matrix

if os.environ.get("NETFDI_PURE", "") not in ("", "0"):
    from . import _kernels_py as _impl
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        from . import _kernels_py as _impl
        BACKEND = "python"

__all__ = ["BACKEND", "KernelParams", "pack", "integrate_chunk", "closed_loop_rhs", "backend_module"]


@dataclass(frozen=True, eq=False)
class KernelParams:
    """Flat parameter arrays describing one interaction protocol on one network."""

    drag: np.ndarray
    poly: np.ndarray
    q0: np.ndarray
    hcode: np.ndarray
    ei: np.ndarray
    ej: np.ndarray
    is_tanh: np.ndarray
    gain: np.ndarray
    zeta_star: np.ndarray
    mu_star: np.ndarray
    w: np.ndarray
    v: np.ndarray
    E: np.ndarray
    single_h: object
    h_groups: tuple


def pack(net, bias=None) -> KernelParams:
    """Flatten a :class:`~netfdi.steady_state.NetworkSystem` for the kernels."""
    a, c = net.astack, net.cstack
    codes = np.ascontiguousarray(a.h_code, dtype=np.int64)
    uniq = np.unique(codes)
    w = net.bias if bias is None else np.asarray(bias, dtype=float)
    f64 = lambda arr: np.ascontiguousarray(arr, dtype=float)
    return KernelParams(
        drag=f64(a.drag), poly=f64(a.poly), q0=f64(a.q0), hcode=codes,
        ei=np.ascontiguousarray([e[0] for e in net.graph.edges], dtype=np.int64),
        ej=np.ascontiguousarray([e[1] for e in net.graph.edges], dtype=np.int64),
        is_tanh=np.ascontiguousarray(c.is_tanh, dtype=np.int64),
        gain=f64(c.gain), zeta_star=f64(c.zeta_star), mu_star=f64(c.mu_star),
        w=f64(w), v=f64(net.feedforward),
        E=incidence_matrix(net.graph).astype(float),
        single_h=int(uniq[0]) if len(uniq) == 1 else None,
        h_groups=tuple((int(k), np.flatnonzero(codes == k)) for k in uniq),
    )


def backend_module(name=None):
    """The kernel module for ``name`` ('cython' or 'python'); default is the active one."""
    if name is None:
        return _impl
    if name == "python":
        from . import _kernels_py
        return _kernels_py
    from . import _kernels
    return _kernels


def integrate_chunk(params, mask, x0, dt, nsteps, out=None, blowup=1e6, backend=None):
    """RK4 from ``x0`` for ``nsteps`` steps of size ``dt``; returns (states, failed_step)."""
    n = len(x0)
    if out is None:
        out = np.empty((nsteps + 1, n))
    impl = backend_module(backend)
    failed = impl.integrate_chunk(params, np.ascontiguousarray(mask, dtype=float),
                                  np.ascontiguousarray(x0, dtype=float), float(dt), int(nsteps),
                                  out, float(blowup))
    return out, int(failed)


def closed_loop_rhs(params, mask, x, backend=None):
    impl = backend_module(backend)
    return impl.closed_loop_rhs(params, np.ascontiguousarray(mask, dtype=float),
                                np.ascontiguousarray(x, dtype=float))
