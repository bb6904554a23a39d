# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled nonnegative weighted-l1 kernel.

Per-column monotone FISTA identical in math to ``_kernels_py``; columns are
independent, so the batch is parallelized over columns with OpenMP. Called
through ``fordn._accel`` which falls back to the numpy implementation when
this extension was not built.
"""

from libc.math cimport sqrt, fabs
from libc.stdlib cimport malloc, free

cimport cython
from cython.parallel cimport prange
from scipy.linalg.cython_blas cimport dsymv

import numpy as np


cdef void _matvec(const double* A, const double* x, double* out, int n) noexcept nogil:
    # A is symmetric, so the C/Fortran layout mismatch is immaterial.
    cdef char uplo = b'L'
    cdef int inc = 1
    cdef double one = 1.0
    cdef double zero = 0.0
    dsymv(&uplo, &n, &one, <double*> A, &n, <double*> x, &inc, &zero, out, &inc)


cdef double _dot(const double* a, const double* b, int n) noexcept nogil:
    cdef int i
    cdef double s = 0.0
    for i in range(n):
        s += a[i] * b[i]
    return s


cdef double _kkt(const double* grad, const double* x, const double* w, int n) noexcept nogil:
    cdef int i
    cdef double g, viol, worst = 0.0
    for i in range(n):
        g = grad[i] + w[i]
        if x[i] > 0.0:
            viol = fabs(g)
        elif g < 0.0:
            viol = -g
        else:
            viol = 0.0
        if viol > worst:
            worst = viol
    return worst


cdef int _solve_column(const double* GtG, const double* gty, double yty,
                       const double* w, double step, int n, int max_iter,
                       double tol, double kkt_tol, int check_every,
                       int stable_checks, double* x, double* out_obj,
                       double* out_kkt) noexcept nogil:
    cdef double* xp = <double*> malloc(5 * n * sizeof(double))
    cdef char* pattern = <char*> malloc(n * sizeof(char))
    if xp == NULL or pattern == NULL:
        free(xp)
        free(pattern)
        return -1
    cdef double* vec = xp + n
    cdef double* z = xp + 2 * n
    cdef double* q = xp + 3 * n
    cdef double* grad = xp + 4 * n

    cdef int i, it, frozen_at, stable, same
    cdef char bit
    cdef double obj, obj_z, tk, t_next, a, dx, scale, ax, kkt

    _matvec(GtG, x, q, n)
    obj = _dot(x, q, n) - 2.0 * _dot(gty, x, n) + yty + _dot(w, x, n)
    for i in range(n):
        grad[i] = 2.0 * (q[i] - gty[i])
        xp[i] = x[i]
        vec[i] = x[i]
        pattern[i] = 1 if x[i] > 0.0 else 0

    tk = 1.0
    stable = 0
    frozen_at = max_iter
    it = 0
    while it < max_iter:
        it += 1
        _matvec(GtG, vec, q, n)
        for i in range(n):
            a = vec[i] - step * (2.0 * (q[i] - gty[i]) + w[i])
            z[i] = a if a > 0.0 else 0.0
        _matvec(GtG, z, q, n)
        obj_z = _dot(z, q, n) - 2.0 * _dot(gty, z, n) + yty + _dot(w, z, n)

        t_next = 0.5 * (1.0 + sqrt(1.0 + 4.0 * tk * tk))
        if obj_z <= obj:
            obj = obj_z
            for i in range(n):
                grad[i] = 2.0 * (q[i] - gty[i])
                a = z[i] + ((tk - 1.0) / t_next) * (z[i] - x[i])
                xp[i] = x[i]
                x[i] = z[i]
                vec[i] = a
        else:
            for i in range(n):
                a = x[i] + (tk / t_next) * (z[i] - x[i])
                xp[i] = x[i]
                vec[i] = a
        tk = t_next

        if it % check_every == 0 or it == max_iter:
            same = 1
            for i in range(n):
                bit = 1 if x[i] > 0.0 else 0
                if bit != pattern[i]:
                    same = 0
                pattern[i] = bit
            stable = stable + 1 if same else 0
            dx = 0.0
            scale = 0.0
            for i in range(n):
                a = fabs(x[i] - xp[i])
                if a > dx:
                    dx = a
                ax = fabs(x[i])
                if ax > scale:
                    scale = ax
            if scale < 1e-30:
                scale = 1e-30
            if dx <= tol * scale:
                kkt = _kkt(grad, x, w, n)
                if kkt <= kkt_tol:
                    frozen_at = it
                    out_obj[0] = obj
                    out_kkt[0] = kkt
                    break
            if stable_checks > 0 and stable >= stable_checks:
                frozen_at = it
                out_obj[0] = obj
                out_kkt[0] = _kkt(grad, x, w, n)
                break

    if frozen_at == max_iter:
        out_obj[0] = obj
        out_kkt[0] = _kkt(grad, x, w, n)
    free(xp)
    free(pattern)
    return frozen_at


def nn_weighted_l1_batch(GtG, Gty, yty, thresh, lipschitz, max_iter=2000,
                         tol=1e-6, kkt_tol=1e-4, x0=None, check_every=8,
                         record_history=False, num_threads=1,
                         stable_checks=3):
    """Compiled counterpart of ``_kernels_py.nn_weighted_l1_batch``."""
    if record_history:
        from . import _kernels_py
        return _kernels_py.nn_weighted_l1_batch(
            GtG, Gty, yty, thresh, lipschitz, max_iter=max_iter, tol=tol,
            kkt_tol=kkt_tol, x0=x0, check_every=check_every,
            record_history=True, stable_checks=stable_checks)

    cdef double[:, ::1] A = np.ascontiguousarray(GtG, dtype=np.float64)
    cdef double[::1, :] B = np.asfortranarray(Gty, dtype=np.float64)
    cdef double[::1] yy = np.ascontiguousarray(yty, dtype=np.float64)
    cdef double[::1, :] W = np.asfortranarray(thresh, dtype=np.float64)
    cdef int n = A.shape[0]
    cdef int v = B.shape[1]
    f0 = np.zeros((n, v)) if x0 is None else np.array(x0, dtype=np.float64)
    cdef double[::1, :] F = np.asfortranarray(f0, dtype=np.float64)

    out_iters = np.empty(v, dtype=np.int64)
    out_obj = np.empty(v, dtype=np.float64)
    out_kkt = np.empty(v, dtype=np.float64)
    cdef long long[::1] it_view = out_iters
    cdef double[::1] obj_view = out_obj
    cdef double[::1] kkt_view = out_kkt

    cdef double step = 1.0 / lipschitz
    cdef int mi = max_iter
    cdef int ce = check_every
    cdef int sc = stable_checks
    cdef double ctol = tol
    cdef double ckkt = kkt_tol
    cdef int nt = max(1, int(num_threads))
    cdef int col

    # Columns are parallelized here, so keep the BLAS pool at one thread to
    # avoid nested-threading contention in dsymv.
    try:
        from threadpoolctl import threadpool_limits
        limiter = threadpool_limits(limits=1, user_api="blas")
    except ImportError:
        limiter = None
    try:
        with nogil:
            for col in prange(v, num_threads=nt, schedule='dynamic'):
                it_view[col] = _solve_column(
                    &A[0, 0], &B[0, col], yy[col], &W[0, col], step, n, mi,
                    ctol, ckkt, ce, sc, &F[0, col], &obj_view[col],
                    &kkt_view[col])
    finally:
        if limiter is not None:
            limiter.unregister()

    if np.any(out_iters < 0):
        raise MemoryError("kernel scratch allocation failed")
    return np.ascontiguousarray(F), out_iters, out_obj, out_kkt, None
