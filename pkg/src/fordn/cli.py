"""Command-line driver: ``phantom``, ``train``, ``estimate``, ``evaluate``.

The subcommands mirror the experiment stages one to one. Every output file
embeds the resolved config hash; ``evaluate`` refuses to mix inputs whose
hashes disagree unless ``--force`` is given. Exit codes: 0 success, 1 usage,
2 validation failure, 3 I/O failure.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, fileio
from .config import JOBS_ENV_VAR, load_config, save_config
from .evaluation import emit_report, paired_stats, summarize_errors, voxel_errors
from .geometry import (dictionary_from_directions, generate_gradient_scheme,
                       tessellate_hemisphere)
from .network import synthesize_training_set, train
from .pipeline import (ALL_METHODS, FoExtractionConfig, ModelStore,
                       coarse_estimate, fordn_estimate, run_baseline,
                       training_configs, truth_volume)
from .signals import PhantomCensusError, PhantomSpec, build_crossing_phantom

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_IO = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_scheme(cfg):
    if cfg.scheme_file:
        return fileio.load_gradient_table(cfg.scheme_file)
    return generate_gradient_scheme(cfg.scheme_k, cfg.scheme_b,
                                    seed=cfg.scheme_seed)


def _bases(cfg):
    coarse = tessellate_hemisphere(cfg.coarse_level)
    dense = tessellate_hemisphere(cfg.dense_level)
    return coarse, dense


def _extraction(cfg):
    return FoExtractionConfig(threshold=cfg.fraction_threshold,
                              theta_r_deg=cfg.theta_r_deg)


def _load_labeled_volume(path, what):
    arr, sidecar = fileio.load_volume(path)
    return arr, sidecar


def cmd_phantom(cfg, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scheme = _build_scheme(cfg)
    spec = PhantomSpec(dims=cfg.phantom_dims, voxel_size_mm=cfg.voxel_size_mm,
                       radius=cfg.phantom_radius)
    phantom = build_crossing_phantom(
        spec, scheme, snr=cfg.snr, seed=cfg.phantom_seed,
        lam1=cfg.lam1, lam2=cfg.lam2, normalize_by=cfg.noise_normalization)

    prov = cfg.provenance()
    meta = dict(prov, snr=cfg.snr, seed=cfg.phantom_seed,
                code_version=__version__)
    fileio.save_volume(out / "signals.f32", phantom.signals.astype("<f4"),
                       cfg.voxel_size_mm, meta=meta)
    fileio.save_volume(out / "labels.u8", phantom.labels, cfg.voxel_size_mm,
                       meta=meta)
    fileio.save_volume(out / "parcels.u8", phantom.parcels, cfg.voxel_size_mm,
                       meta=meta)
    fileio.save_fo_volume(out / "truth.fo", truth_volume(phantom), meta=meta)
    fileio.save_gradient_table(out / "gradients.txt", scheme)
    save_config(out / "config.yaml", cfg)
    print(f"census: {phantom.census['two_crossing']} two-crossing regions, "
          f"{phantom.census['three_crossing']} three-crossing region(s)")
    print(f"in-tract voxels: {len(phantom.truth)}")
    return EXIT_OK


def cmd_train(cfg, signals_path, parcels_path, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    signals, _ = _load_labeled_volume(signals_path, "signals")
    parcels, _ = _load_labeled_volume(parcels_path, "parcels")
    scheme = _build_scheme(cfg)
    coarse, dense = _bases(cfg)
    dense_dict = dictionary_from_directions(scheme, dense, cfg.lam1, cfg.lam2)
    coarse_dict = dictionary_from_directions(scheme, coarse, cfg.lam1, cfg.lam2)
    extraction = _extraction(cfg)
    prov = cfg.provenance()

    regions = sorted(int(r) for r in np.unique(parcels) if r != 0)
    if not regions:
        raise ValueError("parcel volume contains no nonzero region labels")
    for region in regions:
        mask = parcels == region
        configs = training_configs(
            signals, mask, dense_dict, dense, coarse, beta=cfg.beta_cfari,
            cfg=extraction, min_count=cfg.min_config_count,
            max_iter=cfg.solver_max_iter, tol=cfg.solver_tol,
            kkt_tol=cfg.solver_kkt_tol, num_threads=cfg.jobs)
        dataset = synthesize_training_set(
            configs, coarse, scheme, snr=cfg.snr, seed=cfg.train_seed,
            samples_per_combo=cfg.samples_per_combo, lam1=cfg.lam1,
            lam2=cfg.lam2, region_id=region)
        params, history = train(
            dataset, coarse_dict, epochs=cfg.epochs,
            batch_size=cfg.batch_size, seed=cfg.train_seed,
            lr=cfg.learning_rate, lam=cfg.net_lambda, tau=cfg.net_tau,
            depth=cfg.depth)
        metadata = dict(prov, region_id=region, coarse_level=cfg.coarse_level,
                        n_configs=len(configs), n_samples=len(dataset),
                        code_version=__version__)
        fileio.save_model(out / f"region_{region}.dnm", params, region,
                          metadata=metadata, loss_history=history)
        fileio.save_loss_history(out / f"region_{region}_loss.csv", history)
        print(f"region {region}: {len(configs)} configurations, "
              f"{len(dataset)} samples, final loss {history[-1]:.3e}")
    return EXIT_OK


def _load_models(cfg, models_dir, coarse):
    models_dir = Path(models_dir)
    store = ModelStore(coarse)
    for path in sorted(models_dir.glob("region_*.dnm")):
        params, header = fileio.load_model(path)
        store.add(header["region_id"], params, metadata=header.get("metadata"),
                  loss_history=header.get("loss_history"))
    if not store.models:
        raise FileNotFoundError(
            f"no model files (region_*.dnm) in {models_dir}; "
            f"run 'fordn train' first")
    return store


def cmd_estimate(cfg, method, signals_path, parcels_path, models_dir, out_path):
    signals, _ = _load_labeled_volume(signals_path, "signals")
    parcels, _ = _load_labeled_volume(parcels_path, "parcels")
    scheme = _build_scheme(cfg)
    coarse, dense = _bases(cfg)
    dense_dict = dictionary_from_directions(scheme, dense, cfg.lam1, cfg.lam2)
    extraction = _extraction(cfg)

    if method in ("dn", "fordn"):
        if not models_dir:
            raise ValueError(
                f"method {method!r} needs trained models: pass --models "
                f"(run 'fordn train' first)")
        store = _load_models(cfg, models_dir, coarse)

    if method == "cfari":
        volume = run_baseline(
            signals, parcels, dense_dict, dense, "cfari", beta=cfg.beta_cfari,
            cfg=extraction, max_iter=cfg.solver_max_iter, tol=cfg.solver_tol,
            kkt_tol=cfg.solver_kkt_tol, num_threads=cfg.jobs)
    elif method == "l2l0":
        volume = run_baseline(
            signals, parcels, dense_dict, dense, "l2l0", beta=cfg.beta_l2l0,
            cfg=extraction, rounds=cfg.reweight_rounds, eps=cfg.reweight_eps,
            max_iter=cfg.solver_max_iter, tol=cfg.solver_tol,
            kkt_tol=cfg.solver_kkt_tol, num_threads=cfg.jobs)
    elif method == "dn":
        volume = coarse_estimate(signals, parcels, store, extraction)
    elif method == "fordn":
        volume = fordn_estimate(
            signals, parcels, store, dense_dict, dense, alpha=cfg.alpha,
            beta=cfg.beta_guided, cfg=extraction,
            max_iter=cfg.solver_max_iter, tol=cfg.solver_tol,
            kkt_tol=cfg.solver_kkt_tol, num_threads=cfg.jobs)
    else:
        raise ValueError(f"unknown method {method!r}; "
                         f"choose from {', '.join(ALL_METHODS)}")

    meta = dict(cfg.provenance(), method=method, code_version=__version__)
    fileio.save_fo_volume(out_path, volume, meta=meta)
    print(f"{method}: estimated {len(volume)} voxels -> {out_path}")
    return EXIT_OK


def cmd_evaluate(cfg, est_paths, truth_path, labels_path, out_dir, force=False):
    truth, truth_sc = fileio.load_fo_volume(truth_path)
    labels, labels_sc = fileio.load_volume(labels_path)
    estimates = []
    hashes = {truth_sc.get("config_hash"), labels_sc.get("config_hash")}
    for path in est_paths:
        vol, sc = fileio.load_fo_volume(path)
        hashes.add(sc.get("config_hash"))
        estimates.append(vol)
    hashes.discard(None)
    if len(hashes) > 1 and not force:
        raise ValueError(
            f"inputs carry different config hashes {sorted(hashes)}; "
            f"rerun the pipeline from one config or pass --force")

    summaries = []
    errors_by_method = {}
    regions_ref = None
    for vol in estimates:
        _, errors, regions = voxel_errors(vol, truth, labels)
        errors_by_method[vol.tag] = errors
        regions_ref = regions
        summaries.append(summarize_errors(vol.tag, errors, regions))

    stats_entries = []
    if "fordn" in errors_by_method:
        from .signals import (LABEL_NONCROSSING, LABEL_THREE_CROSSING,
                              LABEL_TWO_CROSSING, REGION_NAMES)
        region_masks = {
            "all": np.ones(len(regions_ref), dtype=bool),
            REGION_NAMES[LABEL_NONCROSSING]: regions_ref == LABEL_NONCROSSING,
            REGION_NAMES[LABEL_TWO_CROSSING]: regions_ref == LABEL_TWO_CROSSING,
            REGION_NAMES[LABEL_THREE_CROSSING]: regions_ref == LABEL_THREE_CROSSING,
        }
        fordn_err = errors_by_method["fordn"]
        for other, err in errors_by_method.items():
            if other == "fordn":
                continue
            for rname, mask in region_masks.items():
                if mask.sum() < 2:
                    continue
                st = paired_stats(err[mask], fordn_err[mask],
                                  pair=f"{other}-vs-fordn")
                stats_entries.append((rname, st))

    written = emit_report(summaries, stats_entries, out_dir)
    for s in summaries:
        line = ", ".join(f"{r}: {e.mean:.2f}±{e.std:.2f} (n={e.n})"
                         for r, e in s.regions.items())
        print(f"{s.method}: {line}")
    print("report: " + ", ".join(str(p) for p in written))
    return EXIT_OK


def _add_common(p):
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--jobs", type=int, default=None,
                   help=f"worker threads for voxel-parallel solves "
                        f"(default ${JOBS_ENV_VAR} or 1)")


def build_parser():
    p = _Parser(prog="fordn",
                description="Fiber orientation reconstruction with a "
                            "network-guided sparse solver")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("phantom", help="synthesize the crossing phantom")
    _add_common(sp)
    sp.add_argument("-o", "--out", required=True, help="output directory")
    sp.add_argument("--snr", type=float, default=None)
    sp.add_argument("--seed", type=int, default=None, dest="phantom_seed")

    sp = sub.add_parser("train", help="train per-region networks")
    _add_common(sp)
    sp.add_argument("--signals", required=True)
    sp.add_argument("--parcels", required=True)
    sp.add_argument("-o", "--out", required=True, help="model directory")
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--samples-per-combo", type=int, default=None,
                    dest="samples_per_combo")
    sp.add_argument("--seed", type=int, default=None, dest="train_seed")

    sp = sub.add_parser("estimate", help="estimate FOs from signals")
    _add_common(sp)
    sp.add_argument("--method", required=True, choices=ALL_METHODS)
    sp.add_argument("--signals", required=True)
    sp.add_argument("--parcels", required=True)
    sp.add_argument("--models", default=None, help="model directory (dn/fordn)")
    sp.add_argument("-o", "--out", required=True, help="output FO volume file")

    sp = sub.add_parser("evaluate", help="compare estimates against truth")
    _add_common(sp)
    sp.add_argument("--truth", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--est", action="append", required=True,
                    help="estimated FO volume (repeatable)")
    sp.add_argument("-o", "--out", required=True, help="report directory")
    sp.add_argument("--force", action="store_true",
                    help="allow mixed config hashes")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE

    overrides = {k: v for k, v in vars(args).items()
                 if k in ("snr", "phantom_seed", "train_seed", "epochs",
                          "samples_per_combo", "jobs") and v is not None}
    try:
        cfg = load_config(getattr(args, "config", None), overrides)
        if args.command == "phantom":
            return cmd_phantom(cfg, args.out)
        if args.command == "train":
            return cmd_train(cfg, args.signals, args.parcels, args.out)
        if args.command == "estimate":
            return cmd_estimate(cfg, args.method, args.signals, args.parcels,
                                args.models, args.out)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.est, args.truth, args.labels,
                                args.out, force=args.force)
        parser.error(f"unknown command {args.command!r}")
    except PhantomCensusError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ValueError, KeyError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
