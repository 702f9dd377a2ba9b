# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: counter-based normals and paired fine/coarse EM paths.

Drift and diffusion formulas mirror ``systems.py``; system selection is by
``SdeSystem.kernel_code``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log, cos, exp, tanh, fabs, isfinite
from libc.stdint cimport uint64_t

cnp.import_array()

NAME = "cython"

DEF MAXD = 6
DEF MAXM = 4
DEF TWO_PI = 6.283185307179586

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL

cdef double MA[4]
cdef double MB[4]
cdef double MC[4]
cdef double MD[4]
cdef double MX[4]
cdef double MY[4]
MA[:] = [-1.0, -1.0, -6.5, 0.7]
MB[:] = [0.0, 0.0, 11.0, 0.6]
MC[:] = [-10.0, -10.0, -6.5, 0.7]
MD[:] = [-200.0, -100.0, -170.0, 15.0]
MX[:] = [1.0, 0.0, -0.5, -1.0]
MY[:] = [0.0, 0.5, 1.5, 1.0]


cdef inline uint64_t _mix(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _uniform(uint64_t key, uint64_t c) nogil:
    return <double>(_mix(key + c * GOLDEN) >> 11) * (1.0 / 9007199254740992.0)


cdef uint64_t _normals(uint64_t key, uint64_t counter, double* out, Py_ssize_t n) nogil:
    cdef Py_ssize_t i = 0
    cdef double u1, u2, s, f
    while i < n:
        u1 = 2.0 * _uniform(key, counter) - 1.0
        u2 = 2.0 * _uniform(key, counter + 1) - 1.0
        counter += 2
        s = u1 * u1 + u2 * u2
        if s <= 0.0 or s >= 1.0:
            continue
        f = sqrt(-2.0 * log(s) / s)
        out[i] = u1 * f
        i += 1
        if i < n:
            out[i] = u2 * f
            i += 1
    return counter


def fill_uniforms(uint64_t key, uint64_t start, double[::1] out):
    cdef Py_ssize_t i
    for i in range(out.shape[0]):
        out[i] = _uniform(key, start + <uint64_t>i)


def fill_normals(uint64_t key, uint64_t start, double[::1] out):
    if out.shape[0] == 0:
        return start
    return _normals(key, start, &out[0], out.shape[0])


cdef void _drift(int code, const double* p, const double* x, double t, double* o) nogil:
    cdef double w, g, r, e, dx, dy, a, b, c
    cdef int i, j
    if code == 0:
        o[0] = p[0] * x[0]
    elif code == 1:
        o[0] = 0.0
        o[1] = 0.0
        for i in range(4):
            a = p[0] * MA[i]
            b = p[1] * MB[i]
            c = p[2] * MC[i]
            dx = x[0] - (p[4] + MX[i])
            dy = x[1] - (p[5] + MY[i])
            e = p[3] * MD[i] * exp(a * dx * dx + b * dx * dy + c * dy * dy)
            o[0] -= e * (2.0 * a * dx + b * dy)
            o[1] -= e * (b * dx + 2.0 * c * dy)
    elif code == 2:
        w = TWO_PI / p[0]
        g = 1.0 + sqrt(x[0] * x[0] + x[1] * x[1]) * (cos(TWO_PI * t) - 1.0)
        o[0] = w * (-p[1] * x[1] + x[0] * g)
        o[1] = w * (p[1] * x[0] + x[1] * g)
    elif code == 3:
        o[0] = p[0] * (x[1] - x[0])
        o[1] = x[0] * (p[1] - x[2]) - x[1]
        o[2] = x[0] * x[1] - p[2] * x[2]
    elif code == 4:
        o[0] = p[0] * (p[1] - x[0])
    elif code == 5:
        o[0] = p[0] * cos(p[1] * t) - p[2] * x[0]
    elif code == 6:
        o[0] = -(4.0 * x[0] * (x[0] * x[0] - 1.0))
        o[1] = -(2.0 * p[0] * x[1])
    elif code == 7:
        o[0] = -(4.0 * x[0] * (x[0] * x[0] - 1.0) + p[0] * x[1])
        o[1] = -(x[1] + p[0] * x[0])
    elif code == 8:
        o[0] = x[1]
        o[1] = -p[0] * x[1] - p[1] * x[0] - p[2] * x[0] * x[0] * x[0] + p[3] * cos(p[4] * t)
    elif code == 9:
        r = x[0] * x[0] + x[1] * x[1]
        o[0] = p[0] * (x[0] - x[1] - x[0] * r)
        o[1] = p[0] * (x[0] + x[1] - x[1] * r)
    elif code == 10 or code == 11:
        # r a s b k g D v1 v2
        o[0] = x[0] * (p[0] - p[1] * x[0] + p[2] * x[1] - p[3] * x[2])
        o[1] = p[4] * x[0] * x[2] - x[1] * (p[5] * x[0] + p[6] + p[7])
        o[2] = p[6] * x[1] - p[8] * x[2]
    elif code == 12:
        for j in range(3):
            o[j] = -x[j] + tanh(p[0] * (x[j] + p[1] * x[(j + 1) % 3] + x[3 + j]))
            o[3 + j] = -p[3] * x[3 + j]


cdef void _diff(int code, const double* p, const double* x, double t, double* G, int D, int M) nogil:
    """Diffusion, row-major D x M."""
    cdef int i
    cdef double s
    for i in range(D * M):
        G[i] = 0.0
    if code == 0:
        G[0] = p[1] * x[0]
    elif code == 1:
        s = sqrt(2.0 / p[6])
        G[0] = s
        G[3] = s
    elif code == 2:
        s = p[2] * sqrt(TWO_PI / p[0])
        G[0] = s * x[0] * x[1]
        G[1] = s * x[1] * x[1]
    elif code == 3:
        G[0] = p[3]
        G[4] = p[4]
        G[8] = p[5]
    elif code == 4:
        G[0] = p[2]
    elif code == 5:
        G[0] = p[3]
    elif code == 6 or code == 7:
        s = sqrt(2.0 / p[1])
        G[0] = s
        G[3] = s
    elif code == 8:
        G[1] = sqrt(p[5])
    elif code == 9:
        s = p[1] * sqrt(p[0])
        G[0] = s * x[0] * x[1]
        G[3] = s * x[1] * x[1]
    elif code == 10:
        G[0] = p[9] * x[0]
        G[4] = p[10] * x[1]
        G[8] = p[11] * x[2]
    elif code == 11:
        G[0 * 4 + 0] = p[9] * x[0]
        G[1 * 4 + 1] = p[10] * x[1]
        G[1 * 4 + 2] = p[12] * x[0] * x[2]
        G[2 * 4 + 3] = p[11] * x[2]
    elif code == 12:
        s = p[3] * sqrt(p[2])
        for i in range(3):
            G[(3 + i) * 3 + i] = s


cdef inline bint _em(int code, const double* p, double* x, double t, double h,
                     const double* w, int D, int M, double bound) nogil:
    cdef double b[MAXD]
    cdef double G[MAXD * MAXM]
    cdef double acc
    cdef int d, m
    cdef bint good = True
    _drift(code, p, x, t, b)
    _diff(code, p, x, t, G, D, M)
    for d in range(D):
        acc = 0.0
        for m in range(M):
            acc += G[d * M + m] * w[m]
        x[d] = x[d] + b[d] * h + acc
        if not (fabs(x[d]) <= bound):
            good = False
    return good


def simulate_pairs(system, params, x0, keys, int n_coarse, int k, double dt,
                   double bound, bint keep_fine=False):
    cdef int code = system.kernel_code
    cdef int M = system.noise_dim
    cdef double[:, ::1] P = np.ascontiguousarray(params, dtype=np.float64)
    cdef double[:, ::1] X0 = np.ascontiguousarray(x0, dtype=np.float64)
    cdef cnp.uint64_t[::1] K = np.ascontiguousarray(keys, dtype=np.uint64)
    cdef Py_ssize_t B = X0.shape[0]
    cdef int D = X0.shape[1]
    if code < 0 or D > MAXD or M > MAXM:
        raise ValueError(f"{system.id}: not supported by the compiled kernel")
    cdef Py_ssize_t steps = <Py_ssize_t>n_coarse * k
    fine_np = np.empty((B, n_coarse + 1, D))
    coarse_np = np.empty((B, n_coarse + 1, D))
    agg_np = np.zeros((B, n_coarse, M))
    ok_np = np.ones(B, dtype=np.uint8)
    full_np = np.empty((B, steps + 1 if keep_fine else 1, D))
    noise_np = np.empty(steps * M)
    cdef double[:, :, ::1] FS = fine_np
    cdef double[:, :, ::1] CS = coarse_np
    cdef double[:, :, ::1] AG = agg_np
    cdef cnp.uint8_t[::1] OK = ok_np
    cdef double[:, :, ::1] FF = full_np
    cdef double[::1] Z = noise_np
    cdef double xf[MAXD]
    cdef double xc[MAXD]
    cdef double acc[MAXM]
    cdef double sq = sqrt(dt)
    cdef double hdt = k * dt
    cdef Py_ssize_t b, n, i, m, j
    cdef int d
    cdef bint good
    with nogil:
        for b in range(B):
            if steps > 0:
                _normals(K[b], 0, &Z[0], steps * M)
            for j in range(steps * M):
                Z[j] = Z[j] * sq
            good = True
            for d in range(D):
                xf[d] = X0[b, d]
                xc[d] = X0[b, d]
                FS[b, 0, d] = xf[d]
                CS[b, 0, d] = xc[d]
                if keep_fine:
                    FF[b, 0, d] = xf[d]
            for n in range(n_coarse):
                for j in range(M):
                    acc[j] = 0.0
                for i in range(k):
                    m = n * k + i
                    if good:
                        good = _em(code, &P[b, 0], xf, m * dt, dt, &Z[m * M], D, M, bound)
                        if not good:
                            for d in range(D):
                                xf[d] = 0.0
                    for j in range(M):
                        acc[j] += Z[m * M + j]
                    if keep_fine:
                        for d in range(D):
                            FF[b, m + 1, d] = xf[d]
                for j in range(M):
                    AG[b, n, j] = acc[j]
                if good:
                    good = _em(code, &P[b, 0], xc, n * hdt, hdt, acc, D, M, bound)
                    if not good:
                        for d in range(D):
                            xc[d] = 0.0
                for d in range(D):
                    FS[b, n + 1, d] = xf[d]
                    CS[b, n + 1, d] = xc[d]
            OK[b] = good
    return fine_np, coarse_np, agg_np, ok_np.astype(bool), (full_np if keep_fine else None)
