"""Sparse reconstruction solvers for mixture fractions over a dictionary.

Three entry points share one accelerated kernel:

* :func:`solve_nn_l1` -- nonnegative l1-regularized least squares (the
  classical voxelwise baseline),
* :func:`solve_reweighted_l1` -- iteratively reweighted l1 (sparser, l0-like),
* :func:`solve_weighted_l1` -- per-atom weighted l1, the guided problem
  ``min_{f>=0} ||Gf - y||^2 + beta ||C f||_1`` whose diagonal weights favor
  atoms near externally supplied guiding directions.

:func:`iterative_step` exposes one classical thresholding iteration
``f <- h_lambda(W y + S f)``; it is the reference the unfolded network is
checked against.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from .geometry import Dictionary, Direction

DEFAULT_BETA_GUIDED = 0.25
DEFAULT_ALPHA = 0.8
DEFAULT_REWEIGHT_ROUNDS = 5
DEFAULT_REWEIGHT_EPS = 1e-3


@dataclass(frozen=True)
class SparseProblem:
    """One voxel's reconstruction problem: dictionary, observation, penalty."""

    dictionary: Dictionary
    y: np.ndarray
    beta: float

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if y.ndim != 1 or y.shape[0] != self.dictionary.G.shape[0]:
            raise ValueError("observation length must match dictionary rows")
        if not np.all(np.isfinite(y)) or not np.isfinite(self.beta):
            raise ValueError("non-finite problem data")
        if self.beta < 0:
            raise ValueError("regularization weight must be >= 0")
        object.__setattr__(self, "y", y)


@dataclass(frozen=True)
class GuidanceWeights:
    """Diagonal l1 weights encoding guiding directions.

    ``values[i] = (1 - alpha * max_p |v_i . u_p|) / min_q (1 - alpha * max_p
    |v_q . u_p|)`` so the best-aligned atom has weight exactly 1 and all
    weights are >= 1.
    """

    values: np.ndarray
    alpha: float
    guides: tuple = ()

    def __post_init__(self):
        w = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(w)):
            raise ValueError("guidance weights must be finite")
        if abs(w.min() - 1.0) > 1e-12:
            raise ValueError("guidance weights must be normalized to min 1")
        object.__setattr__(self, "values", w)


@dataclass
class SolverReport:
    """Solution and convergence diagnostics of one solve."""

    f: np.ndarray
    iterations: int
    objective: float
    converged: bool
    wall_time: float
    kkt_residual: float
    objective_history: list | None = field(default=None, repr=False)


def hard_threshold(a, lam):
    """Thresholded ReLU: 0 below ``lam``, identity at or above it."""
    a = np.asarray(a, dtype=float)
    return np.where(a >= lam, a, 0.0)


def soft_threshold_nn(a, lam):
    """Nonnegative soft threshold max(a - lam, 0)."""
    return np.maximum(np.asarray(a, dtype=float) - lam, 0.0)


def iterative_step(f, y, W, S, lam, mode="hard"):
    """One classical sparse-recovery iteration ``h_lam(W y + S f)``.

    ``mode='hard'`` applies the thresholded ReLU, ``mode='soft'`` the
    nonnegative soft threshold.
    """
    if lam < 0:
        raise ValueError("threshold must be >= 0")
    a = W @ np.asarray(y, dtype=float) + S @ np.asarray(f, dtype=float)
    if mode == "hard":
        return hard_threshold(a, lam)
    if mode == "soft":
        return soft_threshold_nn(a, lam)
    raise ValueError(f"unknown mode {mode!r}")


def lipschitz_constant(G, tol=1e-8, max_iter=10000):
    """Largest eigenvalue of 2 G^T G by power iteration on G^T G."""
    GtG = np.asarray(G, dtype=float)
    GtG = GtG.T @ GtG
    rng = np.random.default_rng(0x5EED)
    x = rng.normal(size=GtG.shape[0])
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        z = GtG @ x
        lam_new = float(x @ z)
        nz = np.linalg.norm(z)
        if nz == 0:
            return 0.0
        x = z / nz
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-30):
            lam = lam_new
            break
        lam = lam_new
    return 2.0 * lam


def _active_set_polish(GtG, Gty, yty, w, f0, kkt_tol=1e-4, max_outer=None,
                       max_support=None):
    """Finish a solve exactly on its (small) active support.

    Lawson-Hanson style: repeatedly solve the unconstrained normal equations
    on the current support (the l1 term is linear there), step back to the
    feasible set dropping atoms that hit zero, and admit the worst
    stationarity violator until none is worse than half of ``kkt_tol``.
    Returns ``(f, objective, kkt_residual)``; the objective never increases
    relative to the warm start.
    """
    n = GtG.shape[0]
    x = np.asarray(f0, dtype=float).copy()
    x[x < 0] = 0.0
    if max_support is not None and (x > 0).sum() > max_support:
        # keep only the largest warm-start atoms; any truly needed atom is
        # re-admitted by the outer loop
        order = np.argsort(-x, kind="stable")
        x[order[max_support:]] = 0.0
    active = set(np.flatnonzero(x > 0).tolist())
    if max_outer is None:
        max_outer = 3 * n
    half_tol = 0.5 * kkt_tol

    def solve_on(A):
        M = GtG[np.ix_(A, A)]
        rhs = Gty[A] - 0.5 * w[A]
        try:
            return np.linalg.solve(M, rhs)
        except np.linalg.LinAlgError:
            return np.linalg.lstsq(M, rhs, rcond=None)[0]

    outer = inner = 0
    while outer < max_outer and inner < 10 * max_outer:
        if active:
            A = np.fromiter(sorted(active), dtype=int)
            s = solve_on(A)
            if np.any(s <= 0):
                # step toward s until the first coordinate hits the boundary
                inner += 1
                xa = x[A]
                neg = s <= 0
                denom = xa - s
                ratios = np.full(len(A), np.inf)
                ok = neg & (denom > 0)
                ratios[ok] = xa[ok] / denom[ok]
                alpha = min(1.0, float(ratios.min()))
                xa = xa + alpha * (s - xa)
                xa[ratios <= alpha * (1.0 + 1e-12)] = 0.0
                xa[xa < 0] = 0.0
                x[A] = xa
                active = set(A[xa > 0].tolist())
                continue
            x[A] = s
        g = 2.0 * (GtG @ x - Gty) + w
        if active:
            g_masked = g.copy()
            g_masked[np.fromiter(sorted(active), dtype=int)] = np.inf
        else:
            g_masked = g
        j = int(np.argmin(g_masked))
        if g_masked[j] >= -half_tol:
            break
        active.add(j)
        outer += 1

    obj = float(x @ (GtG @ x) - 2.0 * (Gty @ x) + yty + (w @ x))
    g = 2.0 * (GtG @ x - Gty) + w
    kkt = float(np.where(x > 0, np.abs(g), np.maximum(0.0, -g)).max())
    return x, obj, kkt


def compute_guidance_weights(basis, guides, alpha):
    """Diagonal weights favoring basis atoms aligned with ``guides``.

    Parameters
    ----------
    basis : DirectionSet or (N, 3) array
    guides : nonempty sequence of Direction or length-3 arrays
    alpha : float in [0, 1)
        Guidance strength; 0 yields unit weights.
    """
    if not 0 <= alpha < 1:
        raise ValueError("alpha must lie in [0, 1)")
    guides = tuple(guides)
    if len(guides) == 0:
        raise ValueError("guides must be nonempty; use unit weights instead")
    V = basis if isinstance(basis, np.ndarray) else basis.array
    U = np.array([g.as_array() if isinstance(g, Direction) else np.asarray(g, float)
                  for g in guides])
    m = np.abs(V @ U.T).max(axis=1)
    raw = 1.0 - alpha * m
    return GuidanceWeights(values=raw / raw.min(), alpha=float(alpha),
                           guides=guides)


def _run_kernel(G, y, thresh, lipschitz=None, max_iter=2000, tol=1e-6,
                kkt_tol=1e-4, record_history=False):
    """Accelerated proximal gradient (rel-change stop) plus active-set
    finish to ``kkt_tol``."""
    y = np.asarray(y, dtype=float)
    if lipschitz is None:
        lipschitz = lipschitz_constant(G)
    GtG = G.T @ G
    Gty = G.T @ y
    yty = float(y @ y)
    t0 = time.perf_counter()
    f, iters, obj, kkt, hist = _accel.nn_weighted_l1_batch(
        GtG, Gty[:, None], np.array([yty]), thresh[:, None], lipschitz,
        max_iter=max_iter, tol=tol, kkt_tol=np.inf,
        record_history=record_history)
    f, obj_final, kkt_final = _active_set_polish(
        GtG, Gty, yty, thresh, f[:, 0], kkt_tol=kkt_tol,
        max_support=G.shape[0])
    wall = time.perf_counter() - t0
    if hist is not None:
        hist.append(min(obj_final, hist[-1]))
    return SolverReport(
        f=f, iterations=int(iters[0]), objective=obj_final,
        converged=kkt_final <= kkt_tol, wall_time=wall,
        kkt_residual=kkt_final, objective_history=hist)


def solve_weighted_l1(problem, weights, max_iter=2000, tol=1e-6,
                      kkt_tol=1e-4, lipschitz=None, record_history=False):
    """Solve ``min_{f>=0} ||Gf - y||^2 + beta ||C f||_1``.

    ``weights`` may be a :class:`GuidanceWeights` or a raw per-atom array.
    With unit weights this is exactly :func:`solve_nn_l1` (same kernel, same
    iteration schedule).
    """
    G = problem.dictionary.G
    C = weights.values if isinstance(weights, GuidanceWeights) else \
        np.asarray(weights, dtype=float)
    if C.shape != (G.shape[1],):
        raise ValueError("weights length must match dictionary columns")
    if np.any(C < 0) or not np.all(np.isfinite(C)):
        raise ValueError("weights must be finite and nonnegative")
    return _run_kernel(G, problem.y, problem.beta * C, lipschitz=lipschitz,
                       max_iter=max_iter, tol=tol, kkt_tol=kkt_tol,
                       record_history=record_history)


def solve_nn_l1(problem, max_iter=2000, tol=1e-6, kkt_tol=1e-4,
                lipschitz=None, record_history=False):
    """Nonnegative l1-regularized least squares (unit atom weights)."""
    n = problem.dictionary.G.shape[1]
    return solve_weighted_l1(problem, np.ones(n), max_iter=max_iter, tol=tol,
                             kkt_tol=kkt_tol, lipschitz=lipschitz,
                             record_history=record_history)


def solve_weighted_l1_batch(G, Y, thresh, lipschitz=None, max_iter=2000,
                            tol=1e-6, kkt_tol=1e-4, x0=None, num_threads=1):
    """Solve many weighted problems that share a dictionary.

    ``Y`` is (K, V) observations, ``thresh`` (N, V) per-atom l1 weights
    (already scaled by beta). Each column runs the accelerated kernel and is
    finished by the active-set polish. Returns ``(F, iters, obj, kkt)`` with
    one column/entry per problem.
    """
    G = np.asarray(G, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if lipschitz is None:
        lipschitz = lipschitz_constant(G)
    GtG = G.T @ G
    Gty = G.T @ Y
    yty = np.einsum("kv,kv->v", Y, Y)
    f, iters, obj, kkt, _ = _accel.nn_weighted_l1_batch(
        GtG, Gty, yty, thresh, lipschitz, max_iter=max_iter, tol=tol,
        kkt_tol=np.inf, x0=x0, num_threads=num_threads)
    for col in range(f.shape[1]):
        f[:, col], obj[col], kkt[col] = _active_set_polish(
            GtG, Gty[:, col], float(yty[col]), thresh[:, col], f[:, col],
            kkt_tol=kkt_tol, max_support=G.shape[0])
    return f, iters, obj, kkt


def solve_reweighted_l1(problem, rounds=DEFAULT_REWEIGHT_ROUNDS,
                        eps=DEFAULT_REWEIGHT_EPS, max_iter=2000, tol=1e-6,
                        kkt_tol=1e-4, lipschitz=None):
    """Iteratively reweighted nonnegative l1 (l0-like surrogate).

    Round 1 uses unit weights (identical to :func:`solve_nn_l1`); round r
    reweights each atom by ``1 / (f_i^{(r-1)} + eps)``.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if eps <= 0:
        raise ValueError("eps must be > 0")
    G = problem.dictionary.G
    if lipschitz is None:
        lipschitz = lipschitz_constant(G)
    report = solve_nn_l1(problem, max_iter=max_iter, tol=tol,
                         kkt_tol=kkt_tol, lipschitz=lipschitz)
    total_iters = report.iterations
    for _ in range(rounds - 1):
        w = problem.beta / (report.f + eps)
        f, iters, obj, kkt = solve_weighted_l1_batch(
            G, problem.y[:, None], w[:, None], lipschitz=lipschitz,
            max_iter=max_iter, tol=tol, kkt_tol=kkt_tol,
            x0=report.f[:, None])
        report = SolverReport(
            f=f[:, 0], iterations=int(iters[0]), objective=float(obj[0]),
            converged=float(kkt[0]) <= kkt_tol,
            wall_time=report.wall_time, kkt_residual=float(kkt[0]))
        total_iters += report.iterations
    report.iterations = total_iters
    return report
