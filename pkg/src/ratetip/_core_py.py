"""Pure-Python integration kernel for the extended system.

This module is the fallback implementation of the compiled kernel in
``_core.pyx``; both expose the same functions with the same semantics so
they can be swapped at import time (see ``backend``).  Three right-hand
sides are supported, selected by ``kind``:

* ``SYS_EXTENDED`` (dim 3): the extended system ``(x, y, Lambda)``.
* ``SYS_ADJOINT`` (dim 6): extended system plus the adjoint variational
  equation ``du/dt = -J(w)^T u`` along the running trajectory.
* ``SYS_VARIATIONAL`` (dim 12): extended system plus ``dV/dt = J(w) V``
  for a 3x3 matrix stored column by column.

``t_total < 0`` integrates the time-reversed field.  Status codes:
0 = requested time reached, 1 = escaped (``(x-Lambda)^2 + y^2`` exceeded
the threshold), 2 = step-size underflow.
"""

from __future__ import annotations

import numpy as np

SYS_EXTENDED = 0
SYS_ADJOINT = 1
SYS_VARIATIONAL = 2

_DIM = {SYS_EXTENDED: 3, SYS_ADJOINT: 6, SYS_VARIATIONAL: 12}

_C = (0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0)
_A = (
    (),
    (0.2,),
    (3.0 / 40.0, 9.0 / 40.0),
    (44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0),
    (19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0),
    (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0),
    (35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0),
)
_E = (
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
)


def _rhs(kind, a, b, om, r, lmax, y, sign):
    out = np.empty(len(y))
    x, yy, lam = y[0], y[1], y[2]
    p = x - lam
    u = p * p + yy * yy
    g = a - b * u + u * u
    out[0] = g * p - om * yy
    out[1] = om * p + g * yy
    out[2] = r * lam * (lmax - lam)
    if kind != SYS_EXTENDED:
        dg = -b + 2.0 * u
        j00 = g + 2.0 * p * p * dg
        j01 = 2.0 * p * yy * dg - om
        j10 = om + 2.0 * p * yy * dg
        j11 = g + 2.0 * yy * yy * dg
        j22 = r * (lmax - 2.0 * lam)
        if kind == SYS_ADJOINT:
            # du = -J^T u with J columns (j00,j10,0), (j01,j11,0), (-j00,-j10,j22)
            u1, u2, u3 = y[3], y[4], y[5]
            out[3] = -(j00 * u1 + j10 * u2)
            out[4] = -(j01 * u1 + j11 * u2)
            out[5] = -(-j00 * u1 - j10 * u2 + j22 * u3)
        else:
            for c in range(3):
                v1, v2, v3 = y[3 + 3 * c], y[4 + 3 * c], y[5 + 3 * c]
                out[3 + 3 * c] = j00 * v1 + j01 * v2 - j00 * v3
                out[4 + 3 * c] = j10 * v1 + j11 * v2 - j10 * v3
                out[5 + 3 * c] = r * (lmax - 2.0 * lam) * v3
    if sign < 0:
        out = -out
    return out


def _step_loop(kind, a, b, om, r, lmax, y, t_total, rtol, atol, max_step, esc_sq, t_samples=None, out_samples=None):
    """Core adaptive loop; returns (y, status, t_reached)."""
    sign = -1.0 if t_total < 0 else 1.0
    t_end = abs(t_total)
    t = 0.0
    f = _rhs(kind, a, b, om, r, lmax, y, sign)
    n = len(y)
    k = np.empty((7, n))
    # initial step heuristic
    scale = atol + rtol * np.abs(y)
    d0 = np.sqrt(np.mean((y / scale) ** 2))
    d1 = np.sqrt(np.mean((f / scale) ** 2))
    h = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h = min(h, max_step, 1.0, t_end if t_end > 0 else 1.0)
    sample_idx = 0
    if t_samples is not None:
        while sample_idx < len(t_samples) and t_samples[sample_idx] <= 0.0:
            out_samples[sample_idx] = y[:3]
            sample_idx += 1

    while t < t_end:
        if h < 1e-14 * max(1.0, t):
            if t_samples is not None:
                while sample_idx < len(t_samples):
                    out_samples[sample_idx] = y[:3]
                    sample_idx += 1
            return y, 2, sign * t
        if t + h > t_end:
            h = t_end - t
        k[0] = f
        for i in range(1, 7):
            acc = y.copy()
            ai = _A[i]
            for j in range(i):
                if ai[j] != 0.0:
                    acc = acc + (h * ai[j]) * k[j]
            k[i] = _rhs(kind, a, b, om, r, lmax, acc, sign)
        y_new = y + h * (
            _A[6][0] * k[0]
            + _A[6][2] * k[2]
            + _A[6][3] * k[3]
            + _A[6][4] * k[4]
            + _A[6][5] * k[5]
        )
        err = h * (
            _E[0] * k[0]
            + _E[2] * k[2]
            + _E[3] * k[3]
            + _E[4] * k[4]
            + _E[5] * k[5]
            + _E[6] * k[6]
        )
        sc = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        en = float(np.sqrt(np.mean((err / sc) ** 2)))
        if en <= 1.0:
            t_old = t
            y_old, f_old = y, f
            t = t + h
            y = y_new
            f = k[6].copy()  # FSAL: last stage is the derivative at y_new
            if t_samples is not None:
                while sample_idx < len(t_samples) and t_samples[sample_idx] <= t:
                    ts = t_samples[sample_idx]
                    s = (ts - t_old) / (t - t_old)
                    h00 = (1 + 2 * s) * (1 - s) ** 2
                    h10 = s * (1 - s) ** 2
                    h01 = s * s * (3 - 2 * s)
                    h11 = s * s * (s - 1)
                    hh = t - t_old
                    interp = h00 * y_old + h10 * hh * f_old + h01 * y + h11 * hh * f
                    out_samples[sample_idx] = interp[:3]
                    sample_idx += 1
            dx = y[0] - y[2]
            if dx * dx + y[1] * y[1] >= esc_sq:
                if t_samples is not None:
                    while sample_idx < len(t_samples):
                        out_samples[sample_idx] = y[:3]
                        sample_idx += 1
                return y, 1, sign * t
            grow = 5.0 if en == 0.0 else min(5.0, max(0.2, 0.9 * en ** -0.2))
            h = min(h * grow, max_step)
        else:
            h *= max(0.2, 0.9 * en ** -0.2)
    return y, 0, sign * t


def integrate_endpoint(kind, a, b, om, r, lmax, y0, t_total, rtol, atol, max_step, esc_sq):
    """Integrate one state for ``t_total`` time units; return (y, status, t)."""
    y = np.array(y0, dtype=float)
    if len(y) != _DIM[kind]:
        raise ValueError(f"state dim {len(y)} does not match system kind {kind}")
    return _step_loop(kind, a, b, om, r, lmax, y, t_total, rtol, atol, max_step, esc_sq)


def ensemble_endpoints(a, b, om, r, lmax, Y0, t_total, rtol, atol, max_step, esc_sq):
    """Integrate M extended-system states; returns (Yend, status, t_end) arrays."""
    Y0 = np.asarray(Y0, dtype=float)
    m = Y0.shape[0]
    Yend = np.empty_like(Y0)
    status = np.empty(m, dtype=np.int64)
    t_end = np.empty(m)
    for i in range(m):
        y, s, t = _step_loop(
            SYS_EXTENDED, a, b, om, r, lmax, Y0[i].copy(), t_total, rtol, atol, max_step, esc_sq
        )
        Yend[i] = y
        status[i] = s
        t_end[i] = t
    return Yend, status, t_end


def ensemble_samples(a, b, om, r, lmax, Y0, t_samples, rtol, atol, max_step, esc_sq):
    """Integrate M states, recording each at the elapsed times ``t_samples``.

    ``t_samples`` must be nondecreasing and within ``[0, t_total]`` where
    ``t_total = t_samples[-1]``.  Escaped trajectories hold their escape
    state for the remaining sample times.  Returns ``(samples, status)``
    with ``samples`` of shape ``(len(t_samples), M, 3)``.
    """
    Y0 = np.asarray(Y0, dtype=float)
    t_samples = np.asarray(t_samples, dtype=float)
    m = Y0.shape[0]
    samples = np.empty((len(t_samples), m, 3))
    status = np.empty(m, dtype=np.int64)
    buf = np.empty((len(t_samples), 3))
    for i in range(m):
        _, s, _ = _step_loop(
            SYS_EXTENDED,
            a,
            b,
            om,
            r,
            lmax,
            Y0[i].copy(),
            float(t_samples[-1]),
            rtol,
            atol,
            max_step,
            esc_sq,
            t_samples=t_samples,
            out_samples=buf,
        )
        samples[:, i, :] = buf
        status[i] = s
    return samples, status
