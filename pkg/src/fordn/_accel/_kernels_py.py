"""Numpy implementation of the nonnegative weighted-l1 solver kernel.

Solves, independently for every column v of the batch,

    min_{f >= 0}  ||G f - y_v||^2 + sum_i w_iv * f_iv

by monotone FISTA with constant step 1/L, where L is the Lipschitz constant
of the gradient of the quadratic term (largest eigenvalue of 2 G^T G). The
kernel works on precomputed normal-equation quantities so a whole volume can
be processed with level-3 BLAS:

    GtG = G^T G            (N, N)
    Gty = G^T Y            (N, V)
    yty = column norms^2   (V,)
    thresh = per-column nonnegative l1 weights (N, V)

A column is frozen once its iterate moves by less than ``tol`` in relative
max-norm AND its KKT stationarity residual is below ``kkt_tol``; the recorded
objective sequence is nonincreasing by construction of the monotone step.
"""

import numpy as np


def kkt_residual(grad, f, thresh):
    """Max stationarity violation of ``min ||Gf-y||^2 + w.f, f >= 0``.

    ``grad`` is the gradient of the quadratic term at ``f``. For active
    coordinates (f > 0) the residual is |grad + w|; for inactive ones it is
    the negative part of grad + w.
    """
    g = grad + thresh
    active = f > 0
    viol = np.where(active, np.abs(g), np.maximum(0.0, -g))
    return viol.max(axis=0)


def nn_weighted_l1_batch(GtG, Gty, yty, thresh, lipschitz, max_iter=2000,
                         tol=1e-6, kkt_tol=1e-4, x0=None, check_every=8,
                         record_history=False, num_threads=1,
                         stable_checks=3):
    """Batched nonnegative weighted-l1 least squares.

    Parameters
    ----------
    GtG : (N, N) ndarray
    Gty : (N, V) ndarray
    yty : (V,) ndarray
    thresh : (N, V) ndarray
        Per-column l1 weights (beta * C for guided problems).
    lipschitz : float
        Largest eigenvalue of 2 G^T G; the step is its inverse.
    max_iter, tol, kkt_tol : stopping controls.
    x0 : optional (N, V) warm start.
    record_history : bool
        When true (single problems, diagnostics) the per-iteration objective
        of the first column is returned as ``history``.
    num_threads : ignored here (the compiled backend uses it).
    stable_checks : int
        Also freeze a column once its support pattern is unchanged over this
        many consecutive checks (0 disables); callers that finish with the
        exact active-set step use this to stop early.

    Returns
    -------
    f : (N, V) solutions
    iters : (V,) int iteration counts at freeze time
    obj : (V,) final objectives
    kkt : (V,) final stationarity residuals
    history : list of float or None
    """
    GtG = np.ascontiguousarray(GtG, dtype=np.float64)
    Gty = np.ascontiguousarray(Gty, dtype=np.float64)
    yty = np.asarray(yty, dtype=np.float64)
    thresh = np.ascontiguousarray(thresh, dtype=np.float64)
    n, v = Gty.shape
    if record_history and v != 1:
        raise ValueError("objective history is only recorded for single problems")
    step = 1.0 / lipschitz

    x = np.zeros((n, v)) if x0 is None else np.array(x0, dtype=np.float64)
    x_prev = x.copy()
    vec = x.copy()  # extrapolated point
    q = GtG @ x
    obj = _objective(x, q, Gty, yty, thresh)
    grad_x = 2.0 * (q - Gty)

    out_f = np.zeros((n, v))
    out_iters = np.full(v, max_iter, dtype=np.int64)
    out_obj = np.empty(v)
    out_kkt = np.empty(v)
    idx = np.arange(v)
    prev_pattern = x > 0
    stable = np.zeros(v, dtype=np.int64)
    history = [float(obj[0])] if record_history else None

    tk = 1.0
    it = 0
    while it < max_iter and idx.size:
        it += 1
        grad_v = 2.0 * (GtG @ vec - Gty)
        z = np.maximum(vec - step * (grad_v + thresh), 0.0)
        qz = GtG @ z
        obj_z = _objective(z, qz, Gty, yty, thresh)
        grad_z = 2.0 * (qz - Gty)

        accept = obj_z <= obj
        x_prev = x
        x = np.where(accept, z, x)
        obj = np.where(accept, obj_z, obj)
        grad_x = np.where(accept, grad_z, grad_x)

        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
        vec = x + (tk / t_next) * (z - x) + ((tk - 1.0) / t_next) * (x - x_prev)
        tk = t_next

        if record_history:
            history.append(float(obj[0]))

        if it % check_every == 0 or it == max_iter:
            pattern = x > 0
            same = (pattern == prev_pattern).all(axis=0)
            stable = np.where(same, stable + 1, 0)
            prev_pattern = pattern
            dx = np.abs(x - x_prev).max(axis=0)
            scale = np.maximum(np.abs(x).max(axis=0), 1e-30)
            small = dx <= tol * scale
            if stable_checks > 0:
                small |= stable >= stable_checks
            if small.any():
                kkt = kkt_residual(grad_x[:, small], x[:, small],
                                   thresh[:, small])
                settled = (kkt <= kkt_tol)
                if stable_checks > 0:
                    settled |= (stable[small] >= stable_checks)
                done_local = np.flatnonzero(small)[settled]
                if done_local.size:
                    g = idx[done_local]
                    out_f[:, g] = x[:, done_local]
                    out_iters[g] = it
                    out_obj[g] = obj[done_local]
                    out_kkt[g] = kkt[settled]
                    keep = np.ones(idx.size, dtype=bool)
                    keep[done_local] = False
                    idx = idx[keep]
                    x = x[:, keep]
                    x_prev = x_prev[:, keep]
                    vec = vec[:, keep]
                    obj = obj[keep]
                    grad_x = grad_x[:, keep]
                    Gty = Gty[:, keep]
                    yty = yty[keep]
                    thresh = thresh[:, keep]
                    prev_pattern = prev_pattern[:, keep]
                    stable = stable[keep]

    if idx.size:  # hit max_iter without freezing
        out_f[:, idx] = x
        out_obj[idx] = obj
        out_kkt[idx] = kkt_residual(grad_x, x, thresh)

    return out_f, out_iters, out_obj, out_kkt, history


def _objective(f, q, Gty, yty, thresh):
    # ||Gf - y||^2 + w.f  computed from q = GtG @ f
    return (np.einsum("nv,nv->v", f, q) - 2.0 * np.einsum("nv,nv->v", Gty, f)
            + yty + np.einsum("nv,nv->v", thresh, f))
