"""Directions on the hemisphere, prolate tensors, gradient schemes, dictionaries.

All fiber directions are antipodally symmetric: ``d`` and ``-d`` describe the
same orientation. Every direction is therefore stored as a canonical
representative (first nonzero component among (z, y, x) positive), which makes
direction sets, dictionaries, and file outputs reproducible.
"""

from dataclasses import dataclass, field

import numpy as np

# Default prolate-tensor eigenvalues in mm^2/s (typical single-tract white
# matter); overridable everywhere they are used.
DEFAULT_LAMBDA1 = 1.5e-3
DEFAULT_LAMBDA2 = 3.0e-4

_UNIT_TOL = 1e-12


def _canonical(v):
    """Flip ``v`` so that the first nonzero of (z, y, x) is positive."""
    x, y, z = v
    if z < 0 or (z == 0 and (y < 0 or (y == 0 and x < 0))):
        return -v
    return v


@dataclass(frozen=True)
class Direction:
    """A unit orientation on the hemisphere (antipodal representative).

    Construction normalizes and canonicalizes, so ``Direction(0, 0, -1)``
    and ``Direction(0, 0, 1)`` compare equal.
    """

    x: float
    y: float
    z: float

    def __post_init__(self):
        v = np.array([self.x, self.y, self.z], dtype=float)
        norm = np.linalg.norm(v)
        if norm == 0 or not np.isfinite(norm):
            raise ValueError("direction must be a nonzero finite vector")
        if abs(norm - 1.0) > _UNIT_TOL:
            v = v / norm
        v = _canonical(v)
        object.__setattr__(self, "x", float(v[0]))
        object.__setattr__(self, "y", float(v[1]))
        object.__setattr__(self, "z", float(v[2]))

    @classmethod
    def from_array(cls, v):
        return cls(float(v[0]), float(v[1]), float(v[2]))

    def as_array(self):
        return np.array([self.x, self.y, self.z])


def angle_deg(u, v):
    """Angle between two orientations in degrees, in [0, 90].

    Antipodally invariant: ``angle_deg(u, v) == angle_deg(u, -v)``.
    Accepts ``Direction`` or length-3 array-likes (assumed unit norm).
    """
    ua = u.as_array() if isinstance(u, Direction) else np.asarray(u, dtype=float)
    va = v.as_array() if isinstance(v, Direction) else np.asarray(v, dtype=float)
    c = min(abs(float(np.dot(ua, va))), 1.0)
    return float(np.degrees(np.arccos(c)))


def angle_matrix_deg(a, b):
    """Pairwise antipodal angles in degrees between rows of ``a`` and ``b``."""
    cos = np.clip(np.abs(np.asarray(a) @ np.asarray(b).T), 0.0, 1.0)
    return np.degrees(np.arccos(cos))


@dataclass(frozen=True)
class DirectionSet:
    """Ordered set of pairwise-distinct canonical directions.

    ``level`` is the octahedron edge-subdivision count when the set was
    produced by :func:`tessellate_hemisphere`, else ``None``.
    """

    directions: tuple
    level: int | None = None
    _array: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        arr = np.array([d.as_array() for d in self.directions])
        arr.setflags(write=False)
        object.__setattr__(self, "_array", arr)

    @property
    def array(self):
        """(N, 3) read-only float array of the directions."""
        return self._array

    def __len__(self):
        return len(self.directions)

    def __iter__(self):
        return iter(self.directions)

    def __getitem__(self, i):
        return self.directions[i]

    def min_pairwise_angle_deg(self):
        ang = angle_matrix_deg(self._array, self._array)
        np.fill_diagonal(ang, 90.0)
        return float(ang.min())


def tessellate_hemisphere(n):
    """Hemisphere directions from subdividing each octahedron edge ``n`` times.

    Each triangular face is split into an ``n``-row barycentric grid, all grid
    points are projected to the unit sphere, and antipodal duplicates are
    removed. The result has exactly ``2 n^2 + 1`` members, sorted by their
    canonical (z, y, x) components.

    Parameters
    ----------
    n : int
        Subdivision count per edge, >= 1.

    Returns
    -------
    DirectionSet
    """
    if n < 1:
        raise ValueError("subdivision count must be >= 1")
    seen = {}
    for sx in (1.0, -1.0):
        for sy in (1.0, -1.0):
            for sz in (1.0, -1.0):
                for a in range(n + 1):
                    for b in range(n + 1 - a):
                        c = n - a - b
                        v = np.array([sx * a, sy * b, sz * c], dtype=float)
                        v /= np.linalg.norm(v)
                        v = _canonical(v)
                        seen[tuple(np.round(v, 12))] = v
    dirs = sorted(seen.values(), key=lambda v: (v[2], v[1], v[0]))
    out = DirectionSet(tuple(Direction.from_array(v) for v in dirs), level=n)
    assert len(out) == 2 * n * n + 1
    return out


@dataclass(frozen=True)
class ProlateTensor:
    """Axially symmetric diffusion tensor with one dominant eigenvalue.

    ``matrix = lam2 * I + (lam1 - lam2) * pev pev^T`` so the principal
    eigenvector is ``pev`` with eigenvalue ``lam1`` and the two transverse
    eigenvalues equal ``lam2``. Units mm^2/s.
    """

    pev: Direction
    lam1: float
    lam2: float
    matrix: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (self.lam1 > self.lam2 > 0):
            raise ValueError(
                f"eigenvalues must satisfy lam1 > lam2 > 0, got "
                f"lam1={self.lam1}, lam2={self.lam2}"
            )
        p = self.pev.as_array()
        m = self.lam2 * np.eye(3) + (self.lam1 - self.lam2) * np.outer(p, p)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)


def make_prolate_tensor(pev, lam1=DEFAULT_LAMBDA1, lam2=DEFAULT_LAMBDA2):
    """Prolate tensor with principal eigenvector ``pev`` and eigenvalues
    ``lam1 > lam2 = lam3``."""
    if not isinstance(pev, Direction):
        pev = Direction.from_array(pev)
    return ProlateTensor(pev=pev, lam1=float(lam1), lam2=float(lam2))


@dataclass(frozen=True)
class GradientScheme:
    """Diffusion gradient directions with b-values (s/mm^2)."""

    directions: tuple
    bvals: tuple

    def __post_init__(self):
        if len(self.directions) != len(self.bvals):
            raise ValueError("directions and b-values must have equal length")
        if len(self.directions) < 1:
            raise ValueError("scheme must contain at least one gradient")
        if any(b < 0 for b in self.bvals):
            raise ValueError("b-values must be nonnegative")

    @property
    def array(self):
        return np.array([d.as_array() for d in self.directions])

    @property
    def bval_array(self):
        return np.asarray(self.bvals, dtype=float)

    def __len__(self):
        return len(self.directions)


@dataclass(frozen=True)
class Dictionary:
    """Attenuation matrix of the basis tensors over a gradient scheme.

    ``G[k, i] = exp(-b_k g_k^T D_i g_k)`` for gradient ``g_k`` with b-value
    ``b_k`` and basis tensor ``D_i``. Entries lie in (0, 1]; a b=0 row is
    identically 1.
    """

    G: np.ndarray
    scheme: GradientScheme
    tensors: tuple

    @property
    def shape(self):
        return self.G.shape


def attenuation(gradients, bvals, pevs, lam1=DEFAULT_LAMBDA1, lam2=DEFAULT_LAMBDA2):
    """Attenuation of prolate tensors over gradients, vectorized.

    ``gradients``: (K, 3), ``bvals``: (K,), ``pevs``: (N, 3). Returns (K, N)
    with entries ``exp(-b_k (lam2 + (lam1 - lam2) (g_k . v_i)^2))``.
    """
    gradients = np.asarray(gradients, dtype=float)
    bvals = np.asarray(bvals, dtype=float)
    pevs = np.asarray(pevs, dtype=float)
    proj2 = (gradients @ pevs.T) ** 2
    adc = lam2 + (lam1 - lam2) * proj2
    return np.exp(-bvals[:, None] * adc)


def build_dictionary(scheme, tensors):
    """Build the (K, N) dictionary for ``scheme`` over prolate ``tensors``."""
    if len(scheme) == 0 or len(tensors) == 0:
        raise ValueError("scheme and basis must be nonempty")
    lam1 = {t.lam1 for t in tensors}
    lam2 = {t.lam2 for t in tensors}
    if len(lam1) == 1 and len(lam2) == 1:
        pevs = np.array([t.pev.as_array() for t in tensors])
        G = attenuation(scheme.array, scheme.bval_array, pevs,
                        lam1.pop(), lam2.pop())
    else:
        g = scheme.array
        b = scheme.bval_array
        cols = [np.exp(-b * np.einsum("kj,jl,kl->k", g, t.matrix, g))
                for t in tensors]
        G = np.stack(cols, axis=1)
    G.setflags(write=False)
    return Dictionary(G=G, scheme=scheme, tensors=tuple(tensors))


def dictionary_from_directions(scheme, basis, lam1=DEFAULT_LAMBDA1,
                               lam2=DEFAULT_LAMBDA2):
    """Dictionary whose atoms are prolate tensors along ``basis`` directions."""
    tensors = tuple(make_prolate_tensor(d, lam1, lam2) for d in basis)
    return build_dictionary(scheme, tensors)


def _pair_energy(dirs):
    """Antipodally symmetric electrostatic energy of unit rows ``dirs``."""
    diff = dirs[:, None, :] - dirs[None, :, :]
    summ = dirs[:, None, :] + dirs[None, :, :]
    dd = np.linalg.norm(diff, axis=2)
    ds = np.linalg.norm(summ, axis=2)
    iu = np.triu_indices(len(dirs), k=1)
    return float(np.sum(1.0 / dd[iu]) + np.sum(1.0 / ds[iu]))


def _pair_energy_grad(dirs):
    diff = dirs[:, None, :] - dirs[None, :, :]
    summ = dirs[:, None, :] + dirs[None, :, :]
    dd = np.linalg.norm(diff, axis=2)
    ds = np.linalg.norm(summ, axis=2)
    np.fill_diagonal(dd, np.inf)
    np.fill_diagonal(ds, np.inf)
    grad = -(diff / dd[:, :, None] ** 3).sum(axis=1)
    grad -= (summ / ds[:, :, None] ** 3).sum(axis=1)
    return grad


def generate_gradient_scheme(k, b, seed, iterations=2000):
    """Gradient scheme of ``k`` directions at a single b-value.

    Directions minimize the antipodally symmetric electrostatic energy
    ``sum_{i<j} 1/||d_i - d_j|| + 1/||d_i + d_j||`` by projected gradient
    descent with backtracking from a seeded random start, so the scheme is
    deterministic for a fixed seed.

    Parameters
    ----------
    k : int
        Number of gradients, >= 6.
    b : float
        b-value in s/mm^2 assigned to every gradient.
    seed : int
        RNG seed for the random start.

    Returns
    -------
    GradientScheme
    """
    if k < 6:
        raise ValueError("need at least 6 gradient directions")
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(k, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    energy = _pair_energy(dirs)
    step = 1e-3
    for _ in range(iterations):
        grad = _pair_energy_grad(dirs)
        # Project out the radial component; only tangential motion matters.
        grad -= (grad * dirs).sum(axis=1, keepdims=True) * dirs
        while True:
            trial = dirs - step * grad
            trial /= np.linalg.norm(trial, axis=1, keepdims=True)
            trial_energy = _pair_energy(trial)
            if trial_energy <= energy or step < 1e-14:
                break
            step *= 0.5
        if energy - trial_energy < 1e-12 * abs(energy):
            dirs, energy = trial, trial_energy
            break
        dirs, energy = trial, trial_energy
        step *= 1.2

    dirs = np.array([_canonical(d) for d in dirs])
    directions = tuple(Direction.from_array(d) for d in dirs)
    return GradientScheme(directions=directions, bvals=(float(b),) * k)
