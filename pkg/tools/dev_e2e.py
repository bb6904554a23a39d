#!/usr/bin/env python3
"""Development driver: full phantom experiment with cached stages.

Caches the phantom, the config-extraction baseline run, and the trained
network under /tmp/fordn_dev so individual stages can be iterated on.
Not part of the package deliverable tests; use --fresh to clear.
"""

import argparse
import pickle
import time
from pathlib import Path

import numpy as np

from fordn.evaluation import fo_error, paired_stats
from fordn.geometry import (dictionary_from_directions,
                            generate_gradient_scheme, tessellate_hemisphere)
from fordn.network import synthesize_training_set, train
from fordn.pipeline import (FoExtractionConfig, ModelStore, coarse_estimate,
                            fordn_estimate, run_baseline, training_configs)
from fordn.signals import PhantomSpec, build_crossing_phantom

CACHE = Path("/tmp/fordn_dev")


def cached(name, builder):
    CACHE.mkdir(exist_ok=True)
    path = CACHE / f"{name}.pkl"
    if path.exists():
        print(f"[cache] {name}")
        return pickle.loads(path.read_bytes())
    t0 = time.time()
    obj = builder()
    path.write_bytes(pickle.dumps(obj))
    print(f"[built] {name} in {time.time() - t0:.1f}s")
    return obj


def region_errors(vol, phantom, label_sel=None):
    errs = {1: [], 2: [], 3: []}
    for v in sorted(phantom.truth):
        lab = int(phantom.labels[v])
        errs[lab].append(fo_error(vol.get(v), phantom.truth[v]))
    out = {"all": np.array([e for lst in errs.values() for e in lst])}
    out.update({{1: "non", 2: "2x", 3: "3x"}[k]: np.array(v)
                for k, v in errs.items()})
    return out


def show(tag, errs):
    print(f"{tag:8s} " + "  ".join(f"{k}={v.mean():6.2f}" for k, v in errs.items()))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--fresh", action="store_true")
    ap.add_argument("--samples", type=int, default=100)
    ap.add_argument("--epochs", type=int, default=8)
    ap.add_argument("--beta-cfari", type=float, default=0.25)
    ap.add_argument("--beta-l2l0", type=float, default=0.05)
    ap.add_argument("--alpha", type=float, default=0.8)
    ap.add_argument("--beta-guided", type=float, default=0.25)
    ap.add_argument("--min-count", type=int, default=3)
    args = ap.parse_args()
    if args.fresh and CACHE.exists():
        for p in CACHE.glob("*.pkl"):
            p.unlink()

    scheme = generate_gradient_scheme(30, 1000.0, seed=20)
    coarse = tessellate_hemisphere(6)
    dense = tessellate_hemisphere(12)
    coarse_dict = dictionary_from_directions(scheme, coarse)
    dense_dict = dictionary_from_directions(scheme, dense)
    cfg = FoExtractionConfig()

    phantom = cached("phantom", lambda: build_crossing_phantom(
        PhantomSpec(), scheme, snr=20.0, seed=11))
    mask = phantom.parcels > 0

    cfari = cached(f"cfari_b{args.beta_cfari}", lambda: run_baseline(
        phantom.signals, mask, dense_dict, dense, "cfari",
        beta=args.beta_cfari, cfg=cfg, num_threads=2))
    l2l0 = cached(f"l2l0_b{args.beta_l2l0}", lambda: run_baseline(
        phantom.signals, mask, dense_dict, dense, "l2l0",
        beta=args.beta_l2l0, cfg=cfg, num_threads=2))

    configs = cached(f"configs_b{args.beta_cfari}_m{args.min_count}",
                     lambda: training_configs(
        phantom.signals, mask, dense_dict, dense, coarse,
        beta=args.beta_cfari, cfg=cfg, min_count=args.min_count,
        num_threads=2))
    sizes = np.bincount([len(c) for c in configs], minlength=4)
    print(f"configs: {len(configs)} (1-FO {sizes[1]}, 2-FO {sizes[2]}, "
          f"3-FO {sizes[3]})")

    def build_model():
        ds = synthesize_training_set(configs, coarse, scheme, snr=20.0,
                                     seed=7, samples_per_combo=args.samples)
        print(f"training set: {len(ds)} samples")
        t0 = time.time()
        params, history = train(ds, coarse_dict, epochs=args.epochs, seed=7)
        print(f"trained in {time.time() - t0:.0f}s; loss: "
              + " ".join(f"{x:.5f}" for x in history))
        return params, history

    params, history = cached(f"model_s{args.samples}_e{args.epochs}_m{args.min_count}",
                             build_model)

    store = ModelStore(coarse)
    store.add(1, params, loss_history=history)
    t0 = time.time()
    dn = coarse_estimate(phantom.signals, phantom.parcels, store, cfg)
    print(f"dn estimate in {time.time() - t0:.1f}s")
    t0 = time.time()
    fordn = fordn_estimate(phantom.signals, phantom.parcels, store,
                           dense_dict, dense, alpha=args.alpha,
                           beta=args.beta_guided, cfg=cfg, num_threads=2,
                           coarse_volume=dn)
    print(f"fordn estimate in {time.time() - t0:.1f}s")

    results = {}
    for tag, vol in (("cfari", cfari), ("l2l0", l2l0), ("dn", dn),
                     ("fordn", fordn)):
        results[tag] = region_errors(vol, phantom)
        show(tag, results[tag])

    labs = np.array([int(phantom.labels[v]) for v in sorted(phantom.truth)])
    crossing = labs >= 2
    for other in ("cfari", "l2l0", "dn"):
        st = paired_stats(results[other]["all"][crossing],
                          results["fordn"]["all"][crossing],
                          pair=f"{other}-vs-fordn")
        d2 = paired_stats(results[other]["all"][labs == 2],
                          results["fordn"]["all"][labs == 2]).d
        d3 = paired_stats(results[other]["all"][labs == 3],
                          results["fordn"]["all"][labs == 3]).d
        print(f"{st.pair}: crossing t={st.t:.2f} p={st.p:.2e} d={st.d:.3f} "
              f"| d(2x)={d2:.3f} d(3x)={d3:.3f}")


if __name__ == "__main__":
    main()
