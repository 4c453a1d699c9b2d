# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled integration kernel; see ``_core_py`` for the semantics.

Hand-unrolled Dormand-Prince 4(5) stepping for the extended system and its
adjoint/variational augmentations.  All loops run on C doubles; the Python
layer only sees numpy arrays at the boundaries.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, pow, sqrt

cnp.import_array()

SYS_EXTENDED = 0
SYS_ADJOINT = 1
SYS_VARIATIONAL = 2

cdef int _dim_of(int kind) nogil:
    if kind == 0:
        return 3
    if kind == 1:
        return 6
    return 12


cdef inline void _rhs(int kind, double a, double b, double om, double r,
                      double lmax, double sign, double* y, double* out) nogil:
    cdef double x = y[0], yy = y[1], lam = y[2]
    cdef double p = x - lam
    cdef double u = p * p + yy * yy
    cdef double g = a - b * u + u * u
    cdef double dg, j00, j01, j10, j11, j22, u1, u2, u3, v1, v2, v3
    cdef int c
    out[0] = g * p - om * yy
    out[1] = om * p + g * yy
    out[2] = r * lam * (lmax - lam)
    if kind != 0:
        dg = -b + 2.0 * u
        j00 = g + 2.0 * p * p * dg
        j01 = 2.0 * p * yy * dg - om
        j10 = om + 2.0 * p * yy * dg
        j11 = g + 2.0 * yy * yy * dg
        j22 = r * (lmax - 2.0 * lam)
        if kind == 1:
            u1 = y[3]; u2 = y[4]; u3 = y[5]
            out[3] = -(j00 * u1 + j10 * u2)
            out[4] = -(j01 * u1 + j11 * u2)
            out[5] = -(-j00 * u1 - j10 * u2 + j22 * u3)
        else:
            for c in range(3):
                v1 = y[3 + 3 * c]; v2 = y[4 + 3 * c]; v3 = y[5 + 3 * c]
                out[3 + 3 * c] = j00 * v1 + j01 * v2 - j00 * v3
                out[4 + 3 * c] = j10 * v1 + j11 * v2 - j10 * v3
                out[5 + 3 * c] = j22 * v3
    if sign < 0:
        for c in range(_dim_of(kind)):
            out[c] = -out[c]


cdef int _step_loop(int kind, double a, double b, double om, double r,
                    double lmax, double* y, double t_total, double rtol,
                    double atol, double max_step, double esc_sq,
                    double* t_reached,
                    double* t_samples, double* out_samples, int n_samples) nogil:
    """Returns the status code; final state in ``y``, elapsed signed time in
    ``t_reached``; optional dense samples of the first 3 components."""
    cdef double sign = -1.0 if t_total < 0 else 1.0
    cdef double t_end = fabs(t_total)
    cdef double t = 0.0, t_old, hh, s, h00, h10, h01, h11
    cdef double h, d0, d1, en, sc, e, grow, dx
    cdef double f[12]
    cdef double k2[12]
    cdef double k3[12]
    cdef double k4[12]
    cdef double k5[12]
    cdef double k6[12]
    cdef double k7[12]
    cdef double ytmp[12]
    cdef double ynew[12]
    cdef double yold[12]
    cdef double fold[12]
    cdef int n = _dim_of(kind)
    cdef int i, sample_idx = 0

    _rhs(kind, a, b, om, r, lmax, sign, y, f)

    d0 = 0.0
    d1 = 0.0
    for i in range(n):
        sc = atol + rtol * fabs(y[i])
        d0 += (y[i] / sc) * (y[i] / sc)
        d1 += (f[i] / sc) * (f[i] / sc)
    d0 = sqrt(d0 / n)
    d1 = sqrt(d1 / n)
    if d0 < 1e-5 or d1 < 1e-5:
        h = 1e-6
    else:
        h = 0.01 * d0 / d1
    if h > max_step:
        h = max_step
    if h > 1.0:
        h = 1.0
    if t_end > 0 and h > t_end:
        h = t_end

    while sample_idx < n_samples and t_samples[sample_idx] <= 0.0:
        for i in range(3):
            out_samples[3 * sample_idx + i] = y[i]
        sample_idx += 1

    while t < t_end:
        if h < 1e-14 * (1.0 if t < 1.0 else t):
            while sample_idx < n_samples:
                for i in range(3):
                    out_samples[3 * sample_idx + i] = y[i]
                sample_idx += 1
            t_reached[0] = sign * t
            return 2
        if t + h > t_end:
            h = t_end - t

        for i in range(n):
            ytmp[i] = y[i] + h * 0.2 * f[i]
        _rhs(kind, a, b, om, r, lmax, sign, ytmp, k2)
        for i in range(n):
            ytmp[i] = y[i] + h * (0.075 * f[i] + 0.225 * k2[i])
        _rhs(kind, a, b, om, r, lmax, sign, ytmp, k3)
        for i in range(n):
            ytmp[i] = y[i] + h * (0.9777777777777777 * f[i]
                                  - 3.7333333333333334 * k2[i]
                                  + 3.5555555555555554 * k3[i])
        _rhs(kind, a, b, om, r, lmax, sign, ytmp, k4)
        for i in range(n):
            ytmp[i] = y[i] + h * (2.9525986892242035 * f[i]
                                  - 11.595793324188385 * k2[i]
                                  + 9.822892851699436 * k3[i]
                                  - 0.2908093278463649 * k4[i])
        _rhs(kind, a, b, om, r, lmax, sign, ytmp, k5)
        for i in range(n):
            ytmp[i] = y[i] + h * (2.8462752525252526 * f[i]
                                  - 10.757575757575758 * k2[i]
                                  + 8.906422717743473 * k3[i]
                                  + 0.2784090909090909 * k4[i]
                                  - 0.2735313036020583 * k5[i])
        _rhs(kind, a, b, om, r, lmax, sign, ytmp, k6)
        for i in range(n):
            ynew[i] = y[i] + h * (0.09114583333333333 * f[i]
                                  + 0.44923629829290207 * k3[i]
                                  + 0.6510416666666666 * k4[i]
                                  - 0.322376179245283 * k5[i]
                                  + 0.13095238095238096 * k6[i])
        _rhs(kind, a, b, om, r, lmax, sign, ynew, k7)

        en = 0.0
        for i in range(n):
            e = h * (0.0012326388888888888 * f[i]
                     - 0.0042527702905061394 * k3[i]
                     + 0.03697916666666667 * k4[i]
                     - 0.05086379716981132 * k5[i]
                     + 0.0419047619047619 * k6[i]
                     - 0.025 * k7[i])
            sc = atol + rtol * (fabs(y[i]) if fabs(y[i]) > fabs(ynew[i]) else fabs(ynew[i]))
            en += (e / sc) * (e / sc)
        en = sqrt(en / n)

        if en <= 1.0:
            t_old = t
            for i in range(n):
                yold[i] = y[i]
                fold[i] = f[i]
            t = t + h
            for i in range(n):
                y[i] = ynew[i]
                f[i] = k7[i]
            while sample_idx < n_samples and t_samples[sample_idx] <= t:
                hh = t - t_old
                s = (t_samples[sample_idx] - t_old) / hh
                h00 = (1 + 2 * s) * (1 - s) * (1 - s)
                h10 = s * (1 - s) * (1 - s)
                h01 = s * s * (3 - 2 * s)
                h11 = s * s * (s - 1)
                for i in range(3):
                    out_samples[3 * sample_idx + i] = (h00 * yold[i] + h10 * hh * fold[i]
                                                      + h01 * y[i] + h11 * hh * f[i])
                sample_idx += 1
            dx = y[0] - y[2]
            if dx * dx + y[1] * y[1] >= esc_sq:
                while sample_idx < n_samples:
                    for i in range(3):
                        out_samples[3 * sample_idx + i] = y[i]
                    sample_idx += 1
                t_reached[0] = sign * t
                return 1
            if en == 0.0:
                grow = 5.0
            else:
                grow = 0.9 * pow(en, -0.2)
                if grow > 5.0:
                    grow = 5.0
                if grow < 0.2:
                    grow = 0.2
            h = h * grow
            if h > max_step:
                h = max_step
        else:
            grow = 0.9 * pow(en, -0.2)
            if grow < 0.2:
                grow = 0.2
            h = h * grow

    t_reached[0] = sign * t
    return 0


def integrate_endpoint(int kind, double a, double b, double om, double r,
                       double lmax, y0, double t_total, double rtol,
                       double atol, double max_step, double esc_sq):
    """Integrate one state for ``t_total`` time units; return (y, status, t)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] y = np.array(y0, dtype=np.float64)
    if y.shape[0] != _dim_of(kind):
        raise ValueError(f"state dim {y.shape[0]} does not match system kind {kind}")
    cdef double t_reached = 0.0
    cdef int status = _step_loop(kind, a, b, om, r, lmax, <double*> y.data,
                                 t_total, rtol, atol, max_step, esc_sq,
                                 &t_reached, NULL, NULL, 0)
    return y, status, t_reached


def ensemble_endpoints(double a, double b, double om, double r, double lmax,
                       Y0, double t_total, double rtol, double atol,
                       double max_step, double esc_sq):
    """Integrate M extended-system states; returns (Yend, status, t_end) arrays."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] Y = np.array(Y0, dtype=np.float64)
    cdef Py_ssize_t m = Y.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] status = np.empty(m, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] t_end = np.empty(m, dtype=np.float64)
    cdef double y[12]
    cdef double t_reached
    cdef Py_ssize_t i
    cdef int j
    for i in range(m):
        for j in range(3):
            y[j] = Y[i, j]
        status[i] = _step_loop(0, a, b, om, r, lmax, y, t_total, rtol, atol,
                               max_step, esc_sq, &t_reached, NULL, NULL, 0)
        for j in range(3):
            Y[i, j] = y[j]
        t_end[i] = t_reached
    return Y, status, t_end


def ensemble_samples(double a, double b, double om, double r, double lmax,
                     Y0, t_samples, double rtol, double atol,
                     double max_step, double esc_sq):
    """Integrate M states, recording each at the elapsed times ``t_samples``."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] Y = np.array(Y0, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ts = np.ascontiguousarray(t_samples, dtype=np.float64)
    cdef Py_ssize_t m = Y.shape[0]
    cdef int ns = ts.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=3] samples = np.empty((ns, m, 3), dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] status = np.empty(m, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] buf = np.empty(3 * ns, dtype=np.float64)
    cdef double y[12]
    cdef double t_reached
    cdef Py_ssize_t i
    cdef int j, q
    for i in range(m):
        for j in range(3):
            y[j] = Y[i, j]
        status[i] = _step_loop(0, a, b, om, r, lmax, y, ts[ns - 1], rtol, atol,
                               max_step, esc_sq, &t_reached,
                               <double*> ts.data, <double*> buf.data, ns)
        for q in range(ns):
            for j in range(3):
                samples[q, i, j] = buf[3 * q + j]
    return samples, status
