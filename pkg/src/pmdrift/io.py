"""Deterministic CSV and JSON artifacts."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .field import write_snapshot

DIAG_HEADER = ("t", "mass", "max_rho", "support_radius", "clamped_mass")
DISTANCE_HEADER = ("t", "l1_dist", "sup_dist_fb", "hausdorff_fb")


def fmt(v) -> str:
    """17 significant digits, round-trip exact for binary64."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return f"{float(v):.17g}"


def emit_csv(header, rows, path) -> Path:
    """Write a header line and one comma-separated line per row, LF endings."""
    path = Path(path)
    lines = [",".join(header)]
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row has {len(row)} fields, header has {len(header)}")
        lines.append(",".join(fmt(v) for v in row))
    try:
        path.write_text("\n".join(lines) + "\n", newline="\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_csv(path) -> tuple[list[str], list[list[float]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [[float(v) for v in row] for row in reader]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def emit_manifest(manifest: dict, path) -> Path:
    """Stable-key-ordered JSON; non-finite numbers become null."""
    path = Path(path)
    try:
        path.write_text(dumps(manifest), newline="\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def file_entries(root, paths) -> list[dict]:
    root = Path(root)
    return [{"path": Path(p).relative_to(root).as_posix(), "sha256": sha256(p)}
            for p in sorted(map(Path, paths))]


def verify_manifest(path) -> bool:
    """True if every listed file exists with a matching digest."""
    path = Path(path)
    data = json.loads(path.read_text())
    for entry in data.get("files", []):
        f = path.parent / entry["path"]
        if not f.exists() or sha256(f) != entry["sha256"]:
            return False
    return True


def write_trajectory(traj, directory, prefix: str = "") -> list[Path]:
    """Diagnostics CSV plus one snapshot file per recorded time."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = [emit_csv(DIAG_HEADER, traj.diagnostics(), directory / f"{prefix}diag.csv")]
    for k, (t, rho) in enumerate(zip(traj.times, traj.snapshots)):
        written.append(write_snapshot(rho, directory / f"{prefix}snap_{k}.txt", t))
    return written
