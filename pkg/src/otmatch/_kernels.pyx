# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled two-marginal IPFP loop.

Every log-sum-exp is restricted to the entries whose score lies within
``tau * eps`` of the row (or column) maximum at the last rebuild. The
index sets are rebuilt whenever the oscillation of the potentials since
that rebuild could have moved a discarded entry to within ``tau_min * eps``
of the maximum, so each discarded term contributes less than
``exp(-tau_min)`` relative to the retained sum.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, fabs, isfinite, INFINITY

cnp.import_array()

DEF TAU_MIN = 40.0


cdef void _build(const double[:, ::1] C, const double[::1] other,
                 const double[::1] lw, double eps, double tau, bint by_row,
                 cnp.int64_t[::1] ptr, cnp.int64_t[::1] idx,
                 double[::1] kern, double[::1] lmax) noexcept nogil:
    # scores s[a, b] = (other[b] - C[a, b]) / eps + lw[b] for the axis being
    # updated; keeps s >= max - tau and stores exp(s - max)
    cdef Py_ssize_t n = C.shape[0] if by_row else C.shape[1]
    cdef Py_ssize_t m = C.shape[1] if by_row else C.shape[0]
    cdef Py_ssize_t a, b, pos = 0
    cdef double s, smax, c
    ptr[0] = 0
    for a in range(n):
        smax = -INFINITY
        for b in range(m):
            c = C[a, b] if by_row else C[b, a]
            s = (other[b] - c) / eps + lw[b]
            if s > smax:
                smax = s
        for b in range(m):
            c = C[a, b] if by_row else C[b, a]
            s = (other[b] - c) / eps + lw[b] - smax
            if s >= -tau:
                idx[pos] = b
                kern[pos] = exp(s)
                pos += 1
        ptr[a + 1] = pos
        lmax[a] = smax


cdef double _oscillation(const double[::1] x, const double[::1] ref) noexcept nogil:
    cdef Py_ssize_t k
    cdef double d, lo = INFINITY, hi = -INFINITY
    for k in range(x.shape[0]):
        d = x[k] - ref[k]
        if d < lo:
            lo = d
        if d > hi:
            hi = d
    return hi - lo


cdef double _update(const double[::1] other, const double[::1] ref,
                    double eps, double damp,
                    const cnp.int64_t[::1] ptr, const cnp.int64_t[::1] idx,
                    const double[::1] kern, const double[::1] lmax,
                    double[::1] scale, double[::1] out) noexcept nogil:
    # out[a] = damp * softmin_a using the stored kernel and the drift of
    # ``other`` since the rebuild; returns the sup-norm change
    cdef Py_ssize_t a, p, b
    cdef double top = -INFINITY, acc, new, change = 0.0
    for b in range(other.shape[0]):
        if other[b] - ref[b] > top:
            top = other[b] - ref[b]
    for b in range(other.shape[0]):
        scale[b] = exp((other[b] - ref[b] - top) / eps)
    for a in range(out.shape[0]):
        acc = 0.0
        for p in range(ptr[a], ptr[a + 1]):
            acc += kern[p] * scale[idx[p]]
        new = -damp * (eps * (lmax[a] + log(acc)) + top)
        if fabs(new - out[a]) > change:
            change = fabs(new - out[a])
        out[a] = new
    return change


def ipfp2(const double[:, ::1] C, const double[::1] la, const double[::1] lb,
          double[::1] f, double[::1] g, double eps, double damp_f,
          double damp_g, bint balanced, double tol, Py_ssize_t max_iter,
          double tau=100.0):
    """Run Gauss-Seidel sweeps in place on ``f`` (rows) and ``g`` (columns).

    Returns ``(sweeps, last_change, status)`` where status is 0 on
    convergence, 1 on exhausting ``max_iter`` and 2 on a non-finite update.
    """
    cdef Py_ssize_t n = C.shape[0], m = C.shape[1]
    cdef Py_ssize_t it, k
    cdef double change = INFINITY, dfc, dgc, mean, slack
    cdef int status = 1
    if max_iter < 1:
        raise ValueError("max_iter must be positive")
    if tau < TAU_MIN + 1.0:
        tau = TAU_MIN + 1.0
    slack = (tau - TAU_MIN) * eps
    rptr = np.empty(n + 1, dtype=np.int64)
    ridx = np.empty(n * m, dtype=np.int64)
    cptr = np.empty(m + 1, dtype=np.int64)
    cidx = np.empty(n * m, dtype=np.int64)
    gref = np.array(g, dtype=np.float64)
    fref = np.array(f, dtype=np.float64)
    cdef cnp.int64_t[::1] rp = rptr, ri = ridx, cp = cptr, ci = cidx
    cdef double[::1] gr = gref, fr = fref
    cdef double[::1] rk = np.empty(n * m), ck = np.empty(n * m)
    cdef double[::1] rmax = np.empty(n), cmax = np.empty(m)
    cdef double[::1] gscale = np.empty(m), fscale = np.empty(n)
    cdef double[::1] fold = np.empty(n), gold = np.empty(m)
    with nogil:
        _build(C, g, lb, eps, tau, True, rp, ri, rk, rmax)
        _build(C, f, la, eps, tau, False, cp, ci, ck, cmax)
        for it in range(max_iter):
            fold[:] = f
            gold[:] = g
            if _oscillation(g, gr) > slack:
                _build(C, g, lb, eps, tau, True, rp, ri, rk, rmax)
                gr[:] = g
            _update(g, gr, eps, damp_f, rp, ri, rk, rmax, gscale, f)
            if _oscillation(f, fr) > slack:
                _build(C, f, la, eps, tau, False, cp, ci, ck, cmax)
                fr[:] = f
            _update(f, fr, eps, damp_g, cp, ci, ck, cmax, fscale, g)
            if balanced:
                mean = 0.0
                for k in range(n):
                    mean += exp(la[k]) * f[k]
                for k in range(n):
                    f[k] -= mean
                for k in range(m):
                    g[k] += mean
            change = 0.0
            for k in range(n):
                if not isfinite(f[k]):
                    status = 2
                dfc = fabs(f[k] - fold[k])
                if dfc > change:
                    change = dfc
            for k in range(m):
                if not isfinite(g[k]):
                    status = 2
                dgc = fabs(g[k] - gold[k])
                if dgc > change:
                    change = dgc
            if status == 2:
                break
            if change < tol:
                status = 0
                break
    return it + 1, change, status
