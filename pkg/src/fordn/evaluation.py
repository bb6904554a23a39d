"""Angular error measurement, paired statistics, and report files.

The error between an estimated and a true FO set is the symmetric mean
nearest-angle discrepancy (degrees): average over true FOs of the angle to
the closest estimate, averaged with the same quantity in the other
direction. A missing estimate scores the maximum 90 degrees, so both missed
and spurious orientations are penalized. Fractions do not enter the metric;
the metric name is recorded in every report.
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats as sps

from .geometry import angle_matrix_deg
from .signals import (LABEL_NONCROSSING, LABEL_THREE_CROSSING,
                      LABEL_TWO_CROSSING, REGION_NAMES)

ERROR_METRIC_NAME = "symmetric-mean-min-angle-deg"
REGION_ORDER = ("all", "noncrossing", "2-crossing", "3-crossing")


def fo_error(estimated, truth):
    """Symmetric mean angular discrepancy in degrees, in [0, 90].

    ``estimated`` may be None or empty (scores 90); ``truth`` must be
    nonempty.
    """
    if truth is None or len(truth) == 0:
        raise ValueError("truth FO set must be nonempty")
    if estimated is None or len(estimated) == 0:
        return 90.0
    ang = angle_matrix_deg(truth.direction_array, estimated.direction_array)
    return 0.5 * (float(ang.min(axis=1).mean()) + float(ang.min(axis=0).mean()))


@dataclass
class RegionErrors:
    mean: float
    std: float
    n: int


@dataclass
class ErrorSummary:
    """Per-region error statistics of one method."""

    method: str
    regions: dict = field(default_factory=dict)


def voxel_errors(est, truth, labels):
    """Aligned per-voxel errors over the truth volume.

    Returns ``(voxels, errors, regions)``: the sorted voxel list, an error
    per voxel, and each voxel's region label.
    """
    if tuple(est.dims) != tuple(truth.dims):
        raise ValueError("volume dimensions do not match")
    if tuple(labels.shape) != tuple(truth.dims):
        raise ValueError("label volume dimensions do not match")
    voxels = sorted(truth.voxels)
    errors = np.array([fo_error(est.get(v), truth.voxels[v]) for v in voxels])
    regions = np.array([int(labels[v]) for v in voxels])
    return voxels, errors, regions


def summarize_errors(method, errors, regions):
    summary = ErrorSummary(method=method)
    masks = {
        "all": np.ones(len(errors), dtype=bool),
        REGION_NAMES[LABEL_NONCROSSING]: regions == LABEL_NONCROSSING,
        REGION_NAMES[LABEL_TWO_CROSSING]: regions == LABEL_TWO_CROSSING,
        REGION_NAMES[LABEL_THREE_CROSSING]: regions == LABEL_THREE_CROSSING,
    }
    for name, mask in masks.items():
        sel = errors[mask]
        summary.regions[name] = RegionErrors(
            mean=float(sel.mean()) if sel.size else math.nan,
            std=float(sel.std(ddof=1)) if sel.size > 1 else 0.0,
            n=int(sel.size))
    return summary


def evaluate_volume(est, truth, labels):
    """Per-region and overall error summary of one estimated volume."""
    _, errors, regions = voxel_errors(est, truth, labels)
    return summarize_errors(est.tag, errors, regions)


@dataclass
class PairedStats:
    """Paired t-test and effect size between two aligned error lists.

    Positive t and d mean the first method's errors are larger. A
    zero-variance nonzero difference is flagged degenerate with an infinite
    effect-size sentinel.
    """

    pair: str
    t: float
    p: float
    d: float
    n: int
    degenerate: bool = False


def paired_stats(errors_a, errors_b, pair="a-vs-b"):
    a = np.asarray(errors_a, dtype=float)
    b = np.asarray(errors_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be equal-length vectors")
    n = a.size
    if n < 2:
        raise ValueError("need at least two pairs")
    diff = a - b
    mean = float(diff.mean())
    sd = float(diff.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return PairedStats(pair=pair, t=0.0, p=1.0, d=0.0, n=n)
        return PairedStats(pair=pair, t=math.copysign(math.inf, mean),
                           p=math.nan, d=math.copysign(math.inf, mean),
                           n=n, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    p = 2.0 * float(sps.t.sf(abs(t), n - 1))
    return PairedStats(pair=pair, t=t, p=p, d=mean / sd, n=n)


def write_errors_csv(path, summaries):
    """``errors.csv``: region, method, mean, std, n (one row per pair)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["region", "method", "mean", "std", "n"])
        for summary in summaries:
            for region in REGION_ORDER:
                if region not in summary.regions:
                    continue
                r = summary.regions[region]
                w.writerow([region, summary.method, repr(r.mean),
                            repr(r.std), r.n])


def read_errors_csv(path):
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append({"region": row["region"], "method": row["method"],
                        "mean": float(row["mean"]), "std": float(row["std"]),
                        "n": int(row["n"])})
    return out


def write_stats_csv(path, entries):
    """``stats.csv``: pair, region, t, p, d."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["pair", "region", "t", "p", "d"])
        for region, st in entries:
            w.writerow([st.pair, region, repr(st.t), repr(st.p), repr(st.d)])


def _svg_grouped_bars(title, group_names, series, ylabel, errorbars=None):
    """Minimal static grouped-bar SVG (list of (series_name, values))."""
    width, height = 640, 360
    mleft, mbottom, mtop = 60, 50, 30
    plot_w, plot_h = width - mleft - 20, height - mtop - mbottom
    all_vals = [v for _, vals in series for v in vals if math.isfinite(v)]
    if errorbars:
        all_vals += [v + e for (_, vals), (_, errs) in zip(series, errorbars)
                     for v, e in zip(vals, errs) if math.isfinite(v + e)]
    vmax = max(all_vals + [1e-9])
    colors = ["#4878cf", "#e1812c", "#3a923a", "#c03d3e", "#9372b2"]
    n_groups, n_series = len(group_names), len(series)
    group_w = plot_w / max(n_groups, 1)
    bar_w = 0.8 * group_w / max(n_series, 1)

    def sy(v):
        return mtop + plot_h * (1.0 - v / (1.1 * vmax))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{width}" height="{height}">',
        f'<text x="{width / 2}" y="18" text-anchor="middle" '
        f'font-size="14">{title}</text>',
        f'<line x1="{mleft}" y1="{mtop}" x2="{mleft}" '
        f'y2="{mtop + plot_h}" stroke="black"/>',
        f'<line x1="{mleft}" y1="{mtop + plot_h}" x2="{mleft + plot_w}" '
        f'y2="{mtop + plot_h}" stroke="black"/>',
        f'<text x="14" y="{mtop + plot_h / 2}" font-size="11" text-anchor="middle" '
        f'transform="rotate(-90 14 {mtop + plot_h / 2})">{ylabel}</text>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        v = frac * 1.1 * vmax
        parts.append(f'<text x="{mleft - 6}" y="{sy(v) + 4}" font-size="10" '
                     f'text-anchor="end">{v:.3g}</text>')
    for gi, gname in enumerate(group_names):
        gx = mleft + gi * group_w
        parts.append(f'<text x="{gx + group_w / 2}" y="{height - 28}" '
                     f'font-size="11" text-anchor="middle">{gname}</text>')
        for si, (sname, vals) in enumerate(series):
            v = vals[gi]
            if not math.isfinite(v):
                continue
            x = gx + 0.1 * group_w + si * bar_w
            y = sy(max(v, 0.0))
            h = abs(sy(0.0) - y)
            parts.append(f'<rect x="{x:.2f}" y="{min(y, sy(0.0)):.2f}" '
                         f'width="{bar_w:.2f}" height="{h:.2f}" '
                         f'fill="{colors[si % len(colors)]}"/>')
            if errorbars:
                e = errorbars[si][1][gi]
                if math.isfinite(e) and e > 0:
                    cx = x + bar_w / 2
                    parts.append(f'<line x1="{cx:.2f}" y1="{sy(v - e):.2f}" '
                                 f'x2="{cx:.2f}" y2="{sy(v + e):.2f}" '
                                 f'stroke="black"/>')
    for si, (sname, _) in enumerate(series):
        lx = mleft + 10 + si * 110
        parts.append(f'<rect x="{lx}" y="{height - 16}" width="10" height="10" '
                     f'fill="{colors[si % len(colors)]}"/>')
        parts.append(f'<text x="{lx + 14}" y="{height - 7}" '
                     f'font-size="11">{sname}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def emit_report(summaries, stats_entries, out_dir):
    """Write ``errors.csv``, ``stats.csv``, and grouped-bar SVG panels.

    ``summaries`` is a list of :class:`ErrorSummary` (one per method);
    ``stats_entries`` a list of (region, :class:`PairedStats`). Returns the
    list of written paths.
    """
    if not summaries:
        raise ValueError("nothing to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    errors_csv = out / "errors.csv"
    write_errors_csv(errors_csv, summaries)
    written.append(errors_csv)

    stats_csv = out / "stats.csv"
    write_stats_csv(stats_csv, stats_entries)
    written.append(stats_csv)

    regions = [r for r in REGION_ORDER if r in summaries[0].regions]
    series = [(s.method, [s.regions[r].mean for r in regions])
              for s in summaries]
    errbars = [(s.method, [s.regions[r].std for r in regions])
               for s in summaries]
    svg = _svg_grouped_bars(
        f"FO error by region ({ERROR_METRIC_NAME})", regions, series,
        "mean error (deg)", errorbars=errbars)
    err_svg = out / "fo_errors.svg"
    err_svg.write_text(svg, encoding="utf-8")
    written.append(err_svg)

    if stats_entries:
        pairs = sorted({st.pair for _, st in stats_entries})
        dseries = []
        for pair in pairs:
            by_region = {r: st.d for r, st in stats_entries if st.pair == pair}
            dseries.append((pair, [by_region.get(r, math.nan)
                                   for r in regions]))
        svg = _svg_grouped_bars("Effect sizes (Cohen's d)", regions, dseries,
                                "Cohen's d")
        d_svg = out / "effect_sizes.svg"
        d_svg.write_text(svg, encoding="utf-8")
        written.append(d_svg)
    return written
