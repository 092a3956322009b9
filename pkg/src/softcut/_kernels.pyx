# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: special functions, fused ZINB terms, log-domain Sinkhorn.

Same algorithms and API as ``_fallback``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport log, exp, fabs, INFINITY

cnp.import_array()

cdef double SHIFT = 10.0
cdef double HALF_LOG_2PI = 0.91893853320467274178


cdef inline double _lgamma(double x) nogil:
    cdef double prod = 1.0
    cdef double z = x
    cdef double zi, zi2, s
    while z < SHIFT:
        prod *= z
        z += 1.0
    zi = 1.0 / z
    zi2 = zi * zi
    s = 1.0 / 156.0
    s = s * zi2 - 691.0 / 360360.0
    s = s * zi2 + 1.0 / 1188.0
    s = s * zi2 - 1.0 / 1680.0
    s = s * zi2 + 1.0 / 1260.0
    s = s * zi2 - 1.0 / 360.0
    s = s * zi2 + 1.0 / 12.0
    return (z - 0.5) * log(z) - z + HALF_LOG_2PI + s * zi - log(prod)


cdef inline double _digamma(double x) nogil:
    cdef double acc = 0.0
    cdef double z = x
    cdef double zi2, s
    while z < SHIFT:
        acc += 1.0 / z
        z += 1.0
    zi2 = 1.0 / (z * z)
    s = 1.0 / 12.0
    s = s * zi2 - 691.0 / 32760.0
    s = s * zi2 + 5.0 / 660.0
    s = s * zi2 - 1.0 / 240.0
    s = s * zi2 + 1.0 / 252.0
    s = s * zi2 - 1.0 / 120.0
    s = s * zi2 + 1.0 / 12.0
    return log(z) - 0.5 / z - s * zi2 - acc


def lgamma(x):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] a = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty_like(a)
    cdef Py_ssize_t i, n = a.shape[0]
    with nogil:
        for i in range(n):
            out[i] = _lgamma(a[i])
    return out.reshape(np.shape(x))


def digamma(x):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] a = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty_like(a)
    cdef Py_ssize_t i, n = a.shape[0]
    with nogil:
        for i in range(n):
            out[i] = _digamma(a[i])
    return out.reshape(np.shape(x))


def zinb_nll_terms(x, pi, mu, theta, double floor):
    shape = np.shape(x)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xa = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] pa = np.ascontiguousarray(pi, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ma = np.ascontiguousarray(mu, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ta = np.ascontiguousarray(theta, dtype=np.float64).ravel()
    cdef Py_ssize_t i, n = xa.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] nll = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dpi = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dmu = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dth = np.empty(n)
    cdef double xv, p, m, t, log_tm, log_nb, nb, zero, prob, inv, d_lognb, r
    with nogil:
        for i in range(n):
            xv = xa[i]
            p = pa[i]
            m = ma[i]
            t = ta[i]
            log_tm = log(t + m)
            log_nb = (_lgamma(xv + t) - _lgamma(t) - _lgamma(xv + 1.0)
                      + t * (log(t) - log_tm) + xv * (log(m) - log_tm))
            nb = exp(log_nb)
            zero = 1.0 if xv == 0.0 else 0.0
            prob = p * zero + (1.0 - p) * nb
            if prob > floor:
                nll[i] = -log(prob)
                inv = 1.0 / prob
                dpi[i] = -(zero - nb) * inv
                d_lognb = -(1.0 - p) * nb * inv
                r = (t + xv) / (t + m)
                dmu[i] = d_lognb * (xv / m - r)
                dth[i] = d_lognb * (_digamma(xv + t) - _digamma(t) + log(t)
                                    + 1.0 - log_tm - r)
            else:
                nll[i] = -log(floor)
                dpi[i] = 0.0
                dmu[i] = 0.0
                dth[i] = 0.0
    return (nll.reshape(shape), dpi.reshape(shape),
            dmu.reshape(shape), dth.reshape(shape))


def sinkhorn_log(log_k, log_col, int max_iters, double tol):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] K = np.ascontiguousarray(log_k, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] lc = np.ascontiguousarray(log_col, dtype=np.float64)
    cdef Py_ssize_t n = K.shape[0], c = K.shape[1], i, j
    cdef cnp.ndarray[cnp.float64_t, ndim=1] lu = np.zeros(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] lv = np.zeros(c)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cmax = np.empty(c)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] csum = np.empty(c)
    cdef double mx, s, a, viol = INFINITY, rowsum
    cdef int it = 0
    with nogil:
        while it < max_iters:
            it += 1
            for i in range(n):
                mx = -INFINITY
                for j in range(c):
                    a = K[i, j] + lv[j]
                    if a > mx:
                        mx = a
                if mx == -INFINITY:
                    mx = 0.0
                s = 0.0
                for j in range(c):
                    s += exp(K[i, j] + lv[j] - mx)
                lu[i] = -(mx + log(s))
            for j in range(c):
                cmax[j] = -INFINITY
                csum[j] = 0.0
            for i in range(n):
                for j in range(c):
                    a = K[i, j] + lu[i]
                    if a > cmax[j]:
                        cmax[j] = a
            for j in range(c):
                if cmax[j] == -INFINITY:
                    cmax[j] = 0.0
            for i in range(n):
                for j in range(c):
                    csum[j] += exp(K[i, j] + lu[i] - cmax[j])
            for j in range(c):
                lv[j] = lc[j] - (cmax[j] + log(csum[j]))
            viol = 0.0
            for i in range(n):
                rowsum = 0.0
                for j in range(c):
                    rowsum += exp(K[i, j] + lu[i] + lv[j])
                if fabs(rowsum - 1.0) > viol:
                    viol = fabs(rowsum - 1.0)
            if viol <= tol:
                break
    return lu, lv, it, viol
