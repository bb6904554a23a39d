"""On-disk formats: raw volumes with JSON sidecars, gradient tables, FO
records, and model files.

Volumes are flat little-endian arrays (float32 or uint8) ordered x-fastest,
then y, z, and channel slowest, described by a ``<name>.json`` sidecar.
FO volumes are text records ``i j k n (dx dy dz f)*n`` with a sidecar for
provenance. A model file is one JSON header line followed by little-endian
float32 blobs of W then S, row-major.
"""

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .geometry import Direction, DirectionSet, GradientScheme
from .signals import FOSet

FORMAT_VERSION = "1"


def _sidecar_path(path):
    return Path(str(path) + ".json")


def save_volume(path, array, voxel_size_mm=1.0, meta=None):
    """Write a 3D or 4D (channels last) volume plus sidecar."""
    arr = np.asarray(array)
    path = Path(path)
    if arr.ndim == 3:
        arr4 = arr[..., None]
    elif arr.ndim == 4:
        arr4 = arr
    else:
        raise ValueError("expected a 3D or 4D array")
    dtype = "<u1" if arr4.dtype == np.uint8 else "<f4"
    flat = np.ascontiguousarray(arr4.transpose(3, 2, 1, 0)).astype(dtype)
    flat.tofile(path)
    sidecar = {
        "format_version": FORMAT_VERSION,
        "dims": [int(d) for d in arr4.shape[:3]],
        "voxel_size_mm": float(voxel_size_mm),
        "channels": int(arr4.shape[3]),
        "order": "x-fastest",
        "channel_axis": "slowest",
        "dtype": dtype,
    }
    sidecar.update(meta or {})
    _sidecar_path(path).write_text(
        json.dumps(sidecar, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return path


def load_volume(path):
    """Read a volume written by :func:`save_volume`; returns (array, sidecar).

    3D volumes come back with the channel axis squeezed.
    """
    path = Path(path)
    sidecar = json.loads(_sidecar_path(path).read_text(encoding="utf-8"))
    dims = sidecar["dims"]
    channels = sidecar.get("channels", 1)
    raw = np.fromfile(path, dtype=sidecar.get("dtype", "<f4"))
    expected = channels * dims[0] * dims[1] * dims[2]
    if raw.size != expected:
        raise ValueError(f"volume {path} has {raw.size} values, "
                         f"expected {expected}")
    arr = raw.reshape(channels, dims[2], dims[1], dims[0]).transpose(3, 2, 1, 0)
    arr = np.ascontiguousarray(arr)
    if channels == 1:
        arr = arr[..., 0]
    return arr, sidecar


def save_gradient_table(path, scheme):
    """Plain-text gradient table: one ``gx gy gz b`` line per gradient."""
    lines = [f"{d.x:.17g} {d.y:.17g} {d.z:.17g} {b:.17g}"
             for d, b in zip(scheme.directions, scheme.bvals)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_gradient_table(path):
    """Read a gradient table; directions must be unit within 1e-6."""
    directions, bvals = [], []
    for ln, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"{path}:{ln}: expected 'gx gy gz b'")
        g = np.array([float(v) for v in parts[:3]])
        norm = np.linalg.norm(g)
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"{path}:{ln}: gradient norm {norm} is not unit "
                             f"within 1e-6")
        directions.append(Direction.from_array(g))
        bvals.append(float(parts[3]))
    return GradientScheme(directions=tuple(directions), bvals=tuple(bvals))


def save_direction_set(path, dirset):
    """Directions only, same layout as the gradient table without b."""
    lines = [f"{d.x:.17g} {d.y:.17g} {d.z:.17g}" for d in dirset]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_direction_set(path):
    dirs = []
    for ln, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"{path}:{ln}: expected 'gx gy gz'")
        g = np.array([float(v) for v in parts])
        if abs(np.linalg.norm(g) - 1.0) > 1e-6:
            raise ValueError(f"{path}:{ln}: direction is not unit within 1e-6")
        dirs.append(Direction.from_array(g))
    return DirectionSet(tuple(dirs))


def save_fo_volume(path, volume, meta=None):
    """Text records ``i j k n (dx dy dz f)*n`` plus a JSON sidecar."""
    path = Path(path)
    lines = []
    for (i, j, k) in sorted(volume.voxels):
        fos = volume.voxels[(i, j, k)]
        rec = [str(i), str(j), str(k), str(len(fos))]
        for d, f in fos:
            rec += [f"{d.x:.17g}", f"{d.y:.17g}", f"{d.z:.17g}", f"{f:.17g}"]
        lines.append(" ".join(rec))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    sidecar = {
        "format_version": FORMAT_VERSION,
        "dims": [int(d) for d in volume.dims],
        "tag": volume.tag,
        "params": volume.params,
    }
    sidecar.update(meta or {})
    _sidecar_path(path).write_text(
        json.dumps(sidecar, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return path


def load_fo_volume(path):
    from .pipeline import FoVolume

    path = Path(path)
    sidecar = json.loads(_sidecar_path(path).read_text(encoding="utf-8"))
    voxels = {}
    for ln, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        i, j, k, n = int(parts[0]), int(parts[1]), int(parts[2]), int(parts[3])
        if len(parts) != 4 + 4 * n:
            raise ValueError(f"{path}:{ln}: malformed FO record")
        pairs = []
        for m in range(n):
            vals = [float(v) for v in parts[4 + 4 * m:8 + 4 * m]]
            pairs.append((Direction(vals[0], vals[1], vals[2]), vals[3]))
        voxels[(i, j, k)] = FOSet.from_pairs(pairs)
    vol = FoVolume(dims=tuple(sidecar["dims"]), tag=sidecar.get("tag", ""),
                   voxels=voxels, params=sidecar.get("params", {}))
    return vol, sidecar


def save_model(path, params, region_id, metadata=None, loss_history=None):
    """One JSON header line, then float32 blobs of W and S (row-major)."""
    path = Path(path)
    header = {
        "format_version": FORMAT_VERSION,
        "k": params.n_signals,
        "n_basis": params.n_basis,
        "depth": params.depth,
        "lam": params.lam,
        "tau": params.tau,
        "region_id": int(region_id),
        "metadata": metadata or {},
    }
    if loss_history is not None:
        header["loss_history"] = [float(x) for x in loss_history]
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(params.W.astype("<f4").tobytes(order="C"))
        fh.write(params.S.astype("<f4").tobytes(order="C"))
    return path


def load_model(path):
    """Returns ``(UnfoldedNetParams, header)``; weights come back float64
    (cast from the stored float32)."""
    from .network import UnfoldedNetParams

    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        n, k = header["n_basis"], header["k"]
        W = np.frombuffer(fh.read(4 * n * k), dtype="<f4").reshape(n, k)
        S = np.frombuffer(fh.read(4 * n * n), dtype="<f4").reshape(n, n)
        trailing = fh.read()
    if trailing:
        raise ValueError(f"model file {path} has trailing bytes")
    params = UnfoldedNetParams(W=W.astype(np.float64), S=S.astype(np.float64),
                               lam=header["lam"], tau=header["tau"],
                               depth=header["depth"])
    return params, header


def save_loss_history(path, history):
    lines = ["epoch,loss"] + [f"{e + 1},{loss:.17g}"
                              for e, loss in enumerate(history)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_loss_history(path):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [float(line.split(",")[1]) for line in lines[1:] if line]
