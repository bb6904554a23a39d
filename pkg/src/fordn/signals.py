"""Multi-tensor signal synthesis, Rician noise, and the crossing phantom.

The phantom simulates five fiber tracts on a regular grid: three straight
tubes along the coordinate axes meeting at the volume center (the tube along
x is wide enough to contain the y/z-tube overlap, which keeps the crossing
regions chunky), plus two circular tracts, one of which threads through the
wide tube twice. The tract overlaps form exactly six connected two-tract
regions and one three-tract core, which is validated by a component census.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import (DEFAULT_LAMBDA1, DEFAULT_LAMBDA2, Direction,
                       attenuation)

LABEL_BACKGROUND = 0
LABEL_NONCROSSING = 1
LABEL_TWO_CROSSING = 2
LABEL_THREE_CROSSING = 3

REGION_NAMES = {
    LABEL_NONCROSSING: "noncrossing",
    LABEL_TWO_CROSSING: "2-crossing",
    LABEL_THREE_CROSSING: "3-crossing",
}

REQUIRED_TWO_CROSSING_REGIONS = 6
REQUIRED_THREE_CROSSING_REGIONS = 1


@dataclass(frozen=True)
class FOSet:
    """Fiber orientations at a voxel: (direction, mixture fraction) pairs.

    Stored sorted by descending fraction (ties by canonical components) so
    equal inputs compare equal. Fractions are nonnegative; they sum to one
    for ground truth and normalized estimates.
    """

    items: tuple

    def __post_init__(self):
        norm = []
        for d, f in self.items:
            if not isinstance(d, Direction):
                d = Direction.from_array(d)
            f = float(f)
            if f < 0:
                raise ValueError("mixture fractions must be nonnegative")
            norm.append((d, f))
        norm.sort(key=lambda df: (-df[1], df[0].z, df[0].y, df[0].x))
        object.__setattr__(self, "items", tuple(norm))

    @classmethod
    def from_pairs(cls, pairs):
        return cls(items=tuple(pairs))

    @property
    def directions(self):
        return tuple(d for d, _ in self.items)

    @property
    def fractions(self):
        return np.array([f for _, f in self.items])

    @property
    def direction_array(self):
        return np.array([d.as_array() for d, _ in self.items])

    def normalized(self):
        total = sum(f for _, f in self.items)
        if total <= 0:
            raise ValueError("cannot normalize an all-zero FO set")
        return FOSet(tuple((d, f / total) for d, f in self.items))

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)


@dataclass(frozen=True)
class VoxelSignal:
    """Normalized diffusion attenuations ``y(g_k) = S(g_k) / S(0)``."""

    y: np.ndarray
    s0: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))


def synthesize_signal(fos, scheme, lam1=DEFAULT_LAMBDA1, lam2=DEFAULT_LAMBDA2):
    """Noiseless multi-tensor signal of an FO configuration.

    ``y(g_k) = sum_i f_i exp(-b_k g_k^T D_i g_k)`` with a prolate tensor
    oriented along each FO. Fractions must sum to 1 within 1e-9 and the
    configuration must contain 1 to 3 FOs.
    """
    if not 1 <= len(fos) <= 3:
        raise ValueError("signal model supports 1 to 3 fiber orientations")
    fr = fos.fractions
    if abs(fr.sum() - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fr.sum()!r}")
    A = attenuation(scheme.array, scheme.bval_array, fos.direction_array,
                    lam1, lam2)
    return VoxelSignal(y=A @ fr)


def rician_sigma(snr, s0=1.0):
    if snr <= 0:
        raise ValueError("SNR must be positive")
    return s0 / snr


def add_rician_noise(signal, snr, rng, s0=1.0, normalize_by="clean"):
    """Apply magnitude (Rician) noise to a voxel signal.

    Each raw signal ``S = s0 * y`` becomes ``sqrt((S + n1)^2 + n2^2)`` with
    ``n1, n2 ~ Normal(0, sigma^2)`` and ``sigma = s0 / snr``. The result is
    renormalized by the clean baseline (default, SNR is then exact) or by a
    noisy baseline drawn the same way (``normalize_by='noisy'``).
    """
    if normalize_by not in ("clean", "noisy"):
        raise ValueError("normalize_by must be 'clean' or 'noisy'")
    y = signal.y if isinstance(signal, VoxelSignal) else np.asarray(signal, float)
    sigma = rician_sigma(snr, s0)
    raw = s0 * y
    noise = rng.normal(0.0, sigma, size=(2,) + raw.shape)
    noisy = np.sqrt((raw + noise[0]) ** 2 + noise[1] ** 2)
    if normalize_by == "noisy":
        b0 = rng.normal(0.0, sigma, size=2)
        denom = math.sqrt((s0 + b0[0]) ** 2 + b0[1] ** 2)
    else:
        denom = s0
    return VoxelSignal(y=noisy / denom, s0=s0)


@dataclass(frozen=True)
class StraightTube:
    """Cylinder of radius ``radius`` around the line ``point + t * direction``."""

    point: tuple
    direction: tuple
    radius: float

    def distance(self, coords):
        p = coords - np.asarray(self.point, dtype=float)
        u = np.asarray(self.direction, dtype=float)
        u = u / np.linalg.norm(u)
        along = p @ u
        perp = p - along[..., None] * u
        return np.linalg.norm(perp, axis=-1)

    def tangents(self, coords):
        u = np.asarray(self.direction, dtype=float)
        u = u / np.linalg.norm(u)
        return np.broadcast_to(u, coords.shape).copy()


@dataclass(frozen=True)
class CircleTube:
    """Torus-shaped tract: tube of radius ``radius`` around a circle of
    radius ``ring_radius`` in the plane z = ``z0`` centered at ``center``."""

    center: tuple
    z0: float
    ring_radius: float
    radius: float

    def distance(self, coords):
        dx = coords[..., 0] - self.center[0]
        dy = coords[..., 1] - self.center[1]
        rho = np.hypot(dx, dy)
        return np.hypot(rho - self.ring_radius, coords[..., 2] - self.z0)

    def tangents(self, coords):
        dx = coords[..., 0] - self.center[0]
        dy = coords[..., 1] - self.center[1]
        phi = np.arctan2(dy, dx)
        t = np.stack([-np.sin(phi), np.cos(phi), np.zeros_like(phi)], axis=-1)
        return t


def default_tracts(dims, radius):
    """The five default tracts for a grid of shape ``dims``.

    A fat tube along x contains the mutual overlap of a y-tube and a z-tube
    (the three-way crossing); one ring crosses the fat tube twice; a second
    ring crosses nothing. The two-tract overlaps this produces are two flanks
    of the y-tube, two flanks of the z-tube, and the two ring passages: six
    face-connected regions around one three-tract core. Validated at the
    default 40x40x40 grid with ``radius=4``.
    """
    cx = (dims[0] - 1) / 2.0
    cy = (dims[1] - 1) / 2.0
    cz = (dims[2] - 1) / 2.0
    return (
        StraightTube(point=(cx, cy, cz), direction=(1, 0, 0), radius=2 * radius),
        StraightTube(point=(cx, cy, cz), direction=(0, 1, 0), radius=radius),
        StraightTube(point=(cx, cy, cz), direction=(0, 0, 1), radius=radius),
        CircleTube(center=(cx, cy), z0=cz - 2.125 * radius,
                   ring_radius=3 * radius, radius=radius),
        CircleTube(center=(cx, cy), z0=cz + 2.875 * radius,
                   ring_radius=2.25 * radius, radius=radius),
    )


@dataclass(frozen=True)
class PhantomSpec:
    """Geometric parameters of the crossing phantom."""

    dims: tuple = (40, 40, 40)
    voxel_size_mm: float = 1.0
    radius: float = 4.0
    tracts: tuple = None

    def resolved_tracts(self):
        if self.tracts is not None:
            return self.tracts
        return default_tracts(self.dims, self.radius)


class PhantomCensusError(ValueError):
    """Raised when the realized crossing-region census is wrong."""

    def __init__(self, two_count, three_count):
        self.two_count = two_count
        self.three_count = three_count
        super().__init__(
            f"crossing census mismatch: expected "
            f"{REQUIRED_TWO_CROSSING_REGIONS} two-crossing and "
            f"{REQUIRED_THREE_CROSSING_REGIONS} three-crossing regions, "
            f"realized {two_count} and {three_count}")


@dataclass
class PhantomVolume:
    """Synthesized phantom: signals, ground truth, labels, tract masks."""

    spec: PhantomSpec
    scheme: object
    snr: float
    seed: int
    signals: np.ndarray            # (nx, ny, nz, K) noisy normalized
    clean_signals: np.ndarray      # (nx, ny, nz, K) noiseless
    truth: dict                    # (i, j, k) -> FOSet, in-tract voxels only
    labels: np.ndarray             # (nx, ny, nz) uint8 crossing labels
    parcels: np.ndarray            # (nx, ny, nz) uint8 model-region labels
    tract_masks: np.ndarray        # (T, nx, ny, nz) bool
    lam1: float
    lam2: float
    census: dict = field(default_factory=dict)

    @property
    def dims(self):
        return self.spec.dims


def census_counts(labels):
    """Connected-component counts of the crossing labels.

    Components use face (6-)connectivity: two crossing regions touching only
    at an edge or corner count as distinct locations.
    """
    structure = ndimage.generate_binary_structure(3, 1)
    _, n2 = ndimage.label(labels == LABEL_TWO_CROSSING, structure=structure)
    _, n3 = ndimage.label(labels == LABEL_THREE_CROSSING, structure=structure)
    return int(n2), int(n3)


def build_crossing_phantom(spec, scheme, snr, seed, lam1=DEFAULT_LAMBDA1,
                           lam2=DEFAULT_LAMBDA2, normalize_by="clean",
                           validate_census=True):
    """Build the five-tract crossing phantom with noisy signals.

    Ground truth at a voxel is the set of local tract tangents of every tract
    covering it, with equal fractions. Noise is drawn from a per-voxel seeded
    stream, so the result is independent of any parallel execution layout and
    fully determined by ``seed``.
    """
    dims = spec.dims
    tracts = spec.resolved_tracts()
    ii, jj, kk = np.meshgrid(np.arange(dims[0]), np.arange(dims[1]),
                             np.arange(dims[2]), indexing="ij")
    coords = np.stack([ii, jj, kk], axis=-1).astype(float)

    masks = np.stack([t.distance(coords) < t.radius for t in tracts])
    tangents = [t.tangents(coords) for t in tracts]
    count = masks.sum(axis=0).astype(np.uint8)
    if count.max() > 3:
        raise PhantomCensusError(*census_counts(np.minimum(count, 3)))

    labels = count.copy()
    two_count, three_count = census_counts(labels)
    if validate_census and (two_count != REQUIRED_TWO_CROSSING_REGIONS or
                            three_count != REQUIRED_THREE_CROSSING_REGIONS):
        raise PhantomCensusError(two_count, three_count)

    parcels = (count > 0).astype(np.uint8)

    K = len(scheme)
    clean = np.zeros(dims + (K,), dtype=float)
    truth = {}
    in_tract = np.argwhere(count > 0)
    grad = scheme.array
    bvals = scheme.bval_array
    for i, j, k in in_tract:
        covering = np.flatnonzero(masks[:, i, j, k])
        frac = 1.0 / len(covering)
        pairs = []
        for t in covering:
            pairs.append((Direction.from_array(tangents[t][i, j, k]), frac))
        fos = FOSet.from_pairs(pairs)
        truth[(int(i), int(j), int(k))] = fos
        A = attenuation(grad, bvals, fos.direction_array, lam1, lam2)
        clean[i, j, k] = A @ fos.fractions

    noisy = np.empty_like(clean)
    flat_clean = clean.reshape(-1, K)
    flat_noisy = noisy.reshape(-1, K)
    for vox in range(flat_clean.shape[0]):
        rng = np.random.default_rng(np.random.SeedSequence((seed, vox)))
        flat_noisy[vox] = add_rician_noise(
            flat_clean[vox], snr, rng, normalize_by=normalize_by).y

    return PhantomVolume(
        spec=spec, scheme=scheme, snr=snr, seed=seed, signals=noisy,
        clean_signals=clean, truth=truth, labels=labels, parcels=parcels,
        tract_masks=masks, lam1=lam1, lam2=lam2,
        census={"two_crossing": two_count, "three_crossing": three_count})
