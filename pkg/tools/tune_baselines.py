#!/usr/bin/env python3
"""Grid search the baseline regularization weights on phantom voxels.

The guided solve fixes beta = 0.25 and alpha = 0.8; the classical baselines
need their own l1 weights because too little regularization splinters the
support and too much drops true orientations. This script scores a beta grid
for both baselines against ground truth on a stratified validation subset
and prints the per-region and overall means. Run it whenever the phantom
defaults change and fold the winners into ``fordn.pipeline``.

Usage: python tools/tune_baselines.py [--subsample 3]
"""

import argparse
import time

import numpy as np

from fordn.evaluation import fo_error
from fordn.geometry import (dictionary_from_directions,
                            generate_gradient_scheme, tessellate_hemisphere)
from fordn.pipeline import FoExtractionConfig, run_baseline
from fordn.signals import PhantomSpec, build_crossing_phantom


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--subsample", type=int, default=3,
                    help="keep every n-th noncrossing voxel (crossings all kept)")
    ap.add_argument("--betas", type=float, nargs="+",
                    default=[0.01, 0.02, 0.05, 0.1, 0.25, 0.5])
    args = ap.parse_args()

    scheme = generate_gradient_scheme(30, 1000.0, seed=20)
    dense = tessellate_hemisphere(12)
    dense_dict = dictionary_from_directions(scheme, dense)
    phantom = build_crossing_phantom(PhantomSpec(), scheme, snr=20.0, seed=11)

    mask = np.zeros(phantom.dims, dtype=bool)
    noncross = 0
    for (i, j, k) in sorted(phantom.truth):
        lab = phantom.labels[i, j, k]
        if lab >= 2:
            mask[i, j, k] = True
        else:
            noncross += 1
            if noncross % args.subsample == 0:
                mask[i, j, k] = True
    print(f"validation voxels: {int(mask.sum())}")

    cfg = FoExtractionConfig()
    for method in ("cfari", "l2l0"):
        print(f"--- {method} ---")
        for beta in args.betas:
            t0 = time.time()
            vol = run_baseline(phantom.signals, mask, dense_dict, dense,
                               method, beta=beta, cfg=cfg, num_threads=2)
            errs = {1: [], 2: [], 3: []}
            for v, fos in vol.voxels.items():
                errs[int(phantom.labels[v])].append(
                    fo_error(fos, phantom.truth[v]))
            all_errs = [e for lst in errs.values() for e in lst]
            print(f"beta={beta:<5}: all={np.mean(all_errs):6.2f}  "
                  f"non={np.mean(errs[1]):6.2f}  "
                  f"2x={np.mean(errs[2]):6.2f}  3x={np.mean(errs[3]):6.2f}  "
                  f"({time.time() - t0:5.1f}s)")


if __name__ == "__main__":
    main()
