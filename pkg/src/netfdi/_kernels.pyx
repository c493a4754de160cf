# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled RK4 integration of the closed-loop network (see _kernels_py for the reference)."""
import numpy as np
cimport numpy as cnp
from libc.math cimport cbrt, expm1, tanh, fabs, isfinite

cnp.import_array()


cdef inline double h_eval(int code, double x) noexcept nogil:
    if code == 0:
        return x
    elif code == 1:
        return cbrt(x)
    elif code == 2:
        return -expm1(-x)
    return tanh(x)


cdef void rhs(int n, int m,
              const double[::1] drag, const double[:, ::1] poly, const double[::1] q0,
              const long[::1] hcode, const long[::1] ei, const long[::1] ej,
              const long[::1] is_tanh, const double[::1] gain,
              const double[::1] zs, const double[::1] ms, const double[::1] w,
              const double[::1] v, const double[::1] mask,
              const double* x, double* y, double* u, double* out) noexcept nogil:
    cdef int i, e, a, b
    cdef double z, mu, xi
    for i in range(n):
        y[i] = h_eval(<int>hcode[i], x[i])
        u[i] = v[i]
    for e in range(m):
        if mask[e] == 0.0:
            continue
        a = <int>ei[e]
        b = <int>ej[e]
        z = y[a] - y[b] - zs[e]
        if is_tanh[e]:
            mu = tanh(z)
        else:
            mu = gain[e] * z
        mu = mu + ms[e] + w[e]
        u[a] -= mu
        u[b] += mu
    for i in range(n):
        xi = x[i]
        out[i] = -(drag[i] * xi * fabs(xi)
                   + poly[i, 0] + xi * (poly[i, 1] + xi * (poly[i, 2] + xi * poly[i, 3]))) \
                 + q0[i] * u[i]


def integrate_chunk(params, double[::1] mask, double[::1] x0, double dt, int nsteps,
                    double[:, ::1] out, double blowup):
    """Advance ``nsteps`` RK4 steps from ``x0``; ``out[k]`` receives the state after k steps.

    Returns -1 on success or the index of the first step whose state is
    non-finite or exceeds ``blowup`` in absolute value.
    """
    cdef const double[::1] drag = params.drag
    cdef const double[:, ::1] poly = params.poly
    cdef const double[::1] q0 = params.q0
    cdef const long[::1] hcode = params.hcode
    cdef const long[::1] ei = params.ei
    cdef const long[::1] ej = params.ej
    cdef const long[::1] is_tanh = params.is_tanh
    cdef const double[::1] gain = params.gain
    cdef const double[::1] zs = params.zeta_star
    cdef const double[::1] ms = params.mu_star
    cdef const double[::1] w = params.w
    cdef const double[::1] v = params.v
    cdef int n = x0.shape[0]
    cdef int m = mask.shape[0]
    cdef double[::1] work = np.empty(7 * n)
    cdef double* x = &work[0]
    cdef double* k1 = x + n
    cdef double* k2 = k1 + n
    cdef double* k3 = k2 + n
    cdef double* k4 = k3 + n
    cdef double* tmp = k4 + n
    cdef double[::1] scratch = np.empty(2 * n)
    cdef double* y = &scratch[0]
    cdef double* u = y + n
    cdef int i, k
    cdef int failed = -1
    cdef double half = 0.5 * dt, sixth = dt / 6.0
    with nogil:
        for i in range(n):
            x[i] = x0[i]
            out[0, i] = x[i]
        for k in range(1, nsteps + 1):
            rhs(n, m, drag, poly, q0, hcode, ei, ej, is_tanh, gain, zs, ms, w, v, mask, x, y, u, k1)
            for i in range(n):
                tmp[i] = x[i] + half * k1[i]
            rhs(n, m, drag, poly, q0, hcode, ei, ej, is_tanh, gain, zs, ms, w, v, mask, tmp, y, u, k2)
            for i in range(n):
                tmp[i] = x[i] + half * k2[i]
            rhs(n, m, drag, poly, q0, hcode, ei, ej, is_tanh, gain, zs, ms, w, v, mask, tmp, y, u, k3)
            for i in range(n):
                tmp[i] = x[i] + dt * k3[i]
            rhs(n, m, drag, poly, q0, hcode, ei, ej, is_tanh, gain, zs, ms, w, v, mask, tmp, y, u, k4)
            for i in range(n):
                x[i] = x[i] + sixth * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                out[k, i] = x[i]
                if not isfinite(x[i]) or fabs(x[i]) > blowup:
                    failed = k
            if failed >= 0:
                break
    return failed


def closed_loop_rhs(params, double[::1] mask, double[::1] x):
    cdef int n = x.shape[0]
    out = np.empty(n)
    cdef double[::1] o = out
    scratch = np.empty(2 * n)
    cdef double[::1] s = scratch
    rhs(n, mask.shape[0], params.drag, params.poly, params.q0, params.hcode, params.ei, params.ej,
        params.is_tanh, params.gain, params.zeta_star, params.mu_star, params.w, params.v, mask,
        &x[0], &s[0], &s[n], &o[0])
    return out
