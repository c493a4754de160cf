"""Pure-numpy reference implementation of the integration kernels.

Same signatures and results as the compiled ``_kernels`` module; used
when the extension is not built or ``NETFDI_PURE=1`` is set.
"""
import numpy as np

_H = (
    lambda x: x,
    np.cbrt,
    lambda x: -np.expm1(-x),
    np.tanh,
)


def _rhs(p, mask, x):
    if p.single_h is not None:
        y = _H[p.single_h](x)
    else:
        y = np.empty_like(x)
        for code, idx in p.h_groups:
            y[idx] = _H[code](x[idx])
    z = y[p.ei] - y[p.ej] - p.zeta_star
    g = np.where(p.is_tanh, np.tanh(z), p.gain * z)
    mu = (g + p.mu_star + p.w) * mask
    u = p.v - p.E @ mu
    c = p.poly
    f = p.drag * x * np.abs(x) + c[:, 0] + x * (c[:, 1] + x * (c[:, 2] + x * c[:, 3]))
    return -f + p.q0 * u


def integrate_chunk(params, mask, x0, dt, nsteps, out, blowup):
    x = np.array(x0, dtype=float)
    out[0] = x
    half, sixth = 0.5 * dt, dt / 6.0
    for k in range(1, nsteps + 1):
        k1 = _rhs(params, mask, x)
        k2 = _rhs(params, mask, x + half * k1)
        k3 = _rhs(params, mask, x + half * k2)
        k4 = _rhs(params, mask, x + dt * k3)
        x = x + sixth * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[k] = x
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > blowup:
            return k
    return -1


def closed_loop_rhs(params, mask, x):
    return _rhs(params, np.asarray(mask, dtype=float), np.asarray(x, dtype=float))
