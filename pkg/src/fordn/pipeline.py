"""Two-step estimation pipeline and the classical baselines.

Per voxel the guided procedure runs: trained network on the coarse basis ->
fraction thresholding -> peak refinement -> guidance weights -> weighted
nonnegative l1 on the dense basis -> thresholding/refinement again. The
baselines (plain and reweighted l1) share the identical post-processing so
error comparisons measure the estimators, not the bookkeeping.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import angle_matrix_deg
from .signals import FOSet
from .solvers import (DEFAULT_ALPHA, DEFAULT_BETA_GUIDED,
                      DEFAULT_REWEIGHT_EPS, DEFAULT_REWEIGHT_ROUNDS,
                      compute_guidance_weights, lipschitz_constant,
                      solve_weighted_l1_batch)
from .network import forward

log = logging.getLogger(__name__)

# Baseline regularization, tuned by grid search on phantom validation voxels
# (see tools/tune_baselines.py); the guided beta 0.25 and alpha 0.8 are fixed
# defaults of the method.
DEFAULT_BETA_CFARI = 0.05
DEFAULT_BETA_L2L0 = 0.05

BASELINE_METHODS = ("cfari", "l2l0")
ALL_METHODS = ("cfari", "l2l0", "dn", "fordn")

SOLVE_BLOCK = 512


@dataclass(frozen=True)
class FoExtractionConfig:
    """Post-processing knobs shared by every method."""

    threshold: float = 0.1
    theta_r_deg: float = 20.0

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ValueError("fraction threshold must lie in (0, 1)")
        if not 0 < self.theta_r_deg < 90:
            raise ValueError("refinement angle must lie in (0, 90) degrees")


@dataclass
class FoVolume:
    """Per-voxel FO sets with provenance."""

    dims: tuple
    tag: str
    voxels: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    def get(self, ijk):
        return self.voxels.get(tuple(ijk))

    def __len__(self):
        return len(self.voxels)


def extract_fos(f, basis, cfg=FoExtractionConfig()):
    """Turn a normalized fraction vector into an FO set.

    Atoms with fraction above the threshold are kept and renormalized. If
    nothing clears the threshold the single largest atom is kept (lowest
    index on ties), so tissue voxels never come back empty.
    """
    f = np.asarray(f, dtype=float)
    keep = np.flatnonzero(f > cfg.threshold)
    if keep.size == 0:
        return FOSet.from_pairs([(basis[int(np.argmax(f))], 1.0)])
    fr = f[keep]
    fr = fr / fr.sum()
    return FOSet.from_pairs([(basis[int(i)], float(v))
                             for i, v in zip(keep, fr)])


def refine_fos(fos, theta_r_deg=20.0):
    """Keep only peak orientations: drop any FO that has a strictly larger
    neighbor within ``theta_r_deg``; exact fraction ties are both kept.
    Retained fractions are renormalized."""
    if len(fos) == 0:
        raise ValueError("cannot refine an empty FO set")
    if len(fos) == 1:
        return fos.normalized()
    dirs = fos.direction_array
    fr = fos.fractions
    ang = angle_matrix_deg(dirs, dirs)
    keep = []
    for j in range(len(fos)):
        near = (ang[j] <= theta_r_deg)
        near[j] = False
        if not np.any(fr[near] > fr[j]):
            keep.append(j)
    kept = [(fos.directions[j], fr[j]) for j in keep]
    total = sum(f for _, f in kept)
    return FOSet.from_pairs([(d, f / total) for d, f in kept])


def map_to_coarse_indices(fos, coarse):
    """Indices of the closest coarse atoms, deduplicated.

    Each FO maps to the atom maximizing |v . w| (lowest index on ties);
    duplicates collapse so each orientation is represented once, in the
    order of the (fraction-sorted) input FOs.
    """
    if len(fos) == 0:
        raise ValueError("cannot map an empty FO set")
    V = coarse.array
    out = []
    for w in fos.direction_array:
        idx = int(np.argmax(np.abs(V @ w)))
        if idx not in out:
            out.append(idx)
    return tuple(out)


def map_to_coarse(fos, coarse):
    """The closest coarse basis directions themselves (deduplicated)."""
    return tuple(coarse[i] for i in map_to_coarse_indices(fos, coarse))


def _post_process(f, basis, cfg):
    total = f.sum()
    if total > 0:
        f = f / total
    return refine_fos(extract_fos(f, basis, cfg), cfg.theta_r_deg)


def _region_voxels(parcels, region):
    return [tuple(v) for v in np.argwhere(parcels == region)]


def coarse_estimate(signals, parcels, models, cfg=FoExtractionConfig()):
    """Network estimates for every non-background voxel (tag ``dn``).

    ``models`` maps region label -> trained parameters; a region present in
    ``parcels`` without a model is an error naming the label.
    """
    volume = FoVolume(dims=signals.shape[:3], tag="dn",
                      params={"threshold": cfg.threshold,
                              "theta_r_deg": cfg.theta_r_deg})
    for region in sorted(int(r) for r in np.unique(parcels) if r != 0):
        if region not in models:
            raise KeyError(f"no trained model for region label {region}")
        params = models[region]
        vox = _region_voxels(parcels, region)
        if not vox:
            continue
        Y = np.stack([signals[v] for v in vox])
        fractions, _ = forward(params, Y)
        for v, f in zip(vox, fractions):
            volume.voxels[v] = _post_process(f, models.basis(region), cfg)
    return volume


class ModelStore:
    """Trained per-region networks plus the coarse basis they live on."""

    def __init__(self, coarse_basis):
        self.coarse_basis = coarse_basis
        self.models = {}
        self.metadata = {}
        self.loss_history = {}

    def add(self, region, params, metadata=None, loss_history=None):
        if params.n_basis != len(self.coarse_basis):
            raise ValueError("model basis size does not match the store")
        self.models[int(region)] = params
        self.metadata[int(region)] = dict(metadata or {})
        self.loss_history[int(region)] = list(loss_history or [])

    def __contains__(self, region):
        return int(region) in self.models

    def __getitem__(self, region):
        return self.models[int(region)]

    def basis(self, region):
        return self.coarse_basis

    def regions(self):
        return sorted(self.models)


def _solve_volume(dictionary, Y, thresh, max_iter, tol, kkt_tol, num_threads):
    """Blocked batch solve; block boundaries are fixed so results do not
    depend on the worker count."""
    G = dictionary.G
    lip = lipschitz_constant(G)
    n, v = G.shape[1], Y.shape[1]
    F = np.empty((n, v))
    kkt = np.empty(v)
    for start in range(0, v, SOLVE_BLOCK):
        sl = slice(start, min(start + SOLVE_BLOCK, v))
        F[:, sl], _, _, kkt[sl] = solve_weighted_l1_batch(
            G, Y[:, sl], thresh[:, sl], lipschitz=lip, max_iter=max_iter,
            tol=tol, kkt_tol=kkt_tol, num_threads=num_threads)
    return F, kkt


def fordn_estimate(signals, parcels, models, dense_dictionary, dense_basis,
                   alpha=DEFAULT_ALPHA, beta=DEFAULT_BETA_GUIDED,
                   cfg=FoExtractionConfig(), max_iter=2000, tol=1e-6,
                   kkt_tol=1e-4, num_threads=1, coarse_volume=None):
    """Guided dense estimation (tag ``fordn``).

    The network's refined FOs become guiding directions; atoms of the dense
    basis near a guide get a reduced l1 weight and the weighted problem is
    solved per voxel. Voxels with no guidance fall back to unit weights
    (counted and logged).
    """
    if coarse_volume is None:
        coarse_volume = coarse_estimate(signals, parcels, models, cfg)
    vox = sorted(coarse_volume.voxels)
    volume = FoVolume(dims=signals.shape[:3], tag="fordn",
                      params={"alpha": alpha, "beta": beta,
                              "threshold": cfg.threshold,
                              "theta_r_deg": cfg.theta_r_deg})
    if not vox:
        return volume

    n = len(dense_basis)
    Y = np.stack([signals[v] for v in vox]).T
    thresh = np.empty((n, len(vox)))
    fallbacks = 0
    for col, v in enumerate(vox):
        guides = coarse_volume.voxels[v].directions
        if guides:
            C = compute_guidance_weights(dense_basis, guides, alpha).values
        else:
            fallbacks += 1
            C = np.ones(n)
        thresh[:, col] = beta * C
    if fallbacks:
        log.warning("unit-weight fallback at %d voxels without guidance",
                    fallbacks)

    F, _ = _solve_volume(dense_dictionary, Y, thresh, max_iter, tol, kkt_tol,
                         num_threads)
    for col, v in enumerate(vox):
        volume.voxels[v] = _post_process(F[:, col], dense_basis, cfg)
    volume.params["guidance_fallbacks"] = fallbacks
    return volume


def run_baseline(signals, mask, dictionary, basis, method, beta=None,
                 cfg=FoExtractionConfig(), rounds=DEFAULT_REWEIGHT_ROUNDS,
                 eps=DEFAULT_REWEIGHT_EPS, max_iter=2000, tol=1e-6,
                 kkt_tol=1e-4, num_threads=1):
    """Classical voxelwise baselines over all ``mask`` voxels.

    ``method='cfari'`` solves plain nonnegative l1; ``method='l2l0'`` runs
    the iteratively reweighted variant. Post-processing matches the guided
    pipeline exactly.
    """
    if method not in BASELINE_METHODS:
        raise ValueError(f"unknown baseline method {method!r}")
    if beta is None:
        beta = DEFAULT_BETA_CFARI if method == "cfari" else DEFAULT_BETA_L2L0
    vox = [tuple(v) for v in np.argwhere(np.asarray(mask) > 0)]
    volume = FoVolume(dims=signals.shape[:3], tag=method,
                      params={"beta": beta, "threshold": cfg.threshold,
                              "theta_r_deg": cfg.theta_r_deg})
    if not vox:
        return volume
    n = dictionary.G.shape[1]
    Y = np.stack([signals[v] for v in vox]).T
    thresh = np.full((n, len(Y.T)), beta)
    F, _ = _solve_volume(dictionary, Y, thresh, max_iter, tol, kkt_tol,
                         num_threads)
    if method == "l2l0":
        G = dictionary.G
        lip = lipschitz_constant(G)
        for _ in range(rounds - 1):
            w = beta / (F + eps)
            for start in range(0, len(vox), SOLVE_BLOCK):
                sl = slice(start, min(start + SOLVE_BLOCK, len(vox)))
                F[:, sl], _, _, _ = solve_weighted_l1_batch(
                    G, Y[:, sl], w[:, sl], lipschitz=lip, max_iter=max_iter,
                    tol=tol, kkt_tol=kkt_tol, x0=F[:, sl],
                    num_threads=num_threads)
    for col, v in enumerate(vox):
        volume.voxels[v] = _post_process(F[:, col], basis, cfg)
    if method == "l2l0":
        volume.params["rounds"] = rounds
        volume.params["eps"] = eps
    return volume


def truth_volume(phantom):
    """Ground-truth FoVolume of a phantom."""
    return FoVolume(dims=phantom.dims, tag="truth",
                    voxels=dict(phantom.truth), params={"snr": phantom.snr})


def training_configs(signals, mask, dictionary, basis, coarse_basis,
                     beta=None, cfg=FoExtractionConfig(), min_count=3,
                     max_iter=2000, tol=1e-6, kkt_tol=1e-4, num_threads=1):
    """Coarse FO configurations for training, from the l1 baseline.

    Runs the plain nonnegative l1 baseline over ``mask``, refines each
    voxel's FOs, snaps them to the coarse basis, and returns the deduplicated
    configuration tuples (sorted for determinism). Only cases with three or
    fewer orientations are usable for synthesis, and configurations seen at
    fewer than ``min_count`` voxels are treated as noise artifacts: without
    that filter, single-voxel spurious triples inflate the combination count
    by an order of magnitude. If the filter would empty the set it is
    relaxed to 1.
    """
    base = run_baseline(signals, mask, dictionary, basis, "cfari", beta=beta,
                        cfg=cfg, max_iter=max_iter, tol=tol, kkt_tol=kkt_tol,
                        num_threads=num_threads)
    counts = {}
    for fos in base.voxels.values():
        idx = tuple(sorted(map_to_coarse_indices(fos, coarse_basis)))
        if len(idx) <= 3:
            counts[idx] = counts.get(idx, 0) + 1
    kept = sorted(c for c, n in counts.items() if n >= min_count)
    if not kept:
        kept = sorted(counts)
    if not kept:
        raise ValueError("no usable FO configurations found in the region")
    log.info("training configurations: %d kept of %d observed", len(kept),
             len(counts))
    return kept
