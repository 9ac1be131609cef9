"""Readers and writers for pipeline artifacts.

Tabular artifacts are written either as CSV with a header row (default)
or as JSON lists of row objects, selected by ``fmt``.  Metadata sidecars
always use the ``.meta.json`` suffix so they never collide with JSON
tables.  Floats are written with full round-trip precision so a rerun
with the same seed produces byte-identical files.  Schemas are
documented in docs/formats.md.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from peakforge.forward import ObservationSet, pixel_centers
from peakforge.mesh import Mesh
from peakforge.recovery import RecoveredPeak
from peakforge.solver import SparseSolution

TABLE_FORMATS = ("csv", "json")


def _fmt_cell(value) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def _jsonable(value):
    if isinstance(value, (np.floating, float)):
        return float(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    return value


def write_table(base: Path, header: Sequence[str], rows: Iterable[Sequence],
                fmt: str = "csv") -> Path:
    """Write one tabular artifact as ``<base>.csv`` or ``<base>.json``."""
    if fmt not in TABLE_FORMATS:
        raise ValueError(f"unknown table format {fmt!r}")
    base = Path(base)
    base.parent.mkdir(parents=True, exist_ok=True)
    rows = [list(row) for row in rows]
    if fmt == "csv":
        path = base.with_suffix(".csv")
        lines = [",".join(header)]
        lines.extend(",".join(_fmt_cell(v) for v in row) for row in rows)
        path.write_text("\n".join(lines) + "\n")
    else:
        path = base.with_suffix(".json")
        payload = [{k: _jsonable(v) for k, v in zip(header, row)} for row in rows]
        path.write_text(json.dumps(payload, indent=2) + "\n")
    return path


def write_json(path: Path, payload: Dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(Path(path).read_bytes())
    return digest.hexdigest()


# ======================================================================
# Observations
# ======================================================================

def write_observations(out_dir: Path, obs: ObservationSet,
                       basename: str = "observations",
                       fmt: str = "csv") -> List[Path]:
    """Write pixel values as a table, raw binary, and a metadata sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    m = obs.grid_size
    dim = obs.points.shape[1]
    idx = np.arange(obs.values.size)
    if dim == 1:
        header = ["j1", "z1", "w"]
        rows = zip(idx, obs.points[:, 0], obs.values)
    else:
        header = ["j1", "j2", "z1", "z2", "w"]
        rows = zip(idx // m, idx % m, obs.points[:, 0], obs.points[:, 1], obs.values)
    table_path = write_table(out_dir / basename, header, rows, fmt)

    bin_path = out_dir / f"{basename}.bin"
    bin_path.write_bytes(np.ascontiguousarray(obs.values, dtype="<f8").tobytes())

    meta_path = write_json(out_dir / f"{basename}.meta.json", {
        "M": m,
        "domain": [list(axis) for axis in obs.domain],
        "snrDb": (None if np.isinf(obs.snr_db) else obs.snr_db),
        "seed": obs.seed,
        "dimension": dim,
    })
    return [table_path, bin_path, meta_path]


def load_observations(out_dir: Path, basename: str = "observations") -> ObservationSet:
    """Reload a saved observation set.

    Only the measured values survive a round trip; the loaded set carries
    them in both ``values`` and ``signal`` with a zero noise component.
    """
    out_dir = Path(out_dir)
    meta = json.loads((out_dir / f"{basename}.meta.json").read_text())
    values = np.frombuffer((out_dir / f"{basename}.bin").read_bytes(), dtype="<f8").copy()
    domain = tuple(tuple(axis) for axis in meta["domain"])
    points = pixel_centers(meta["M"], domain)
    if points.shape[0] != values.size:
        raise ValueError("observation binary does not match sidecar grid size")
    snr = meta["snrDb"]
    return ObservationSet(points=points, values=values, signal=values.copy(),
                          noise=np.zeros_like(values), grid_size=meta["M"],
                          snr_db=(np.inf if snr is None else float(snr)),
                          seed=meta["seed"], scale=0.0, domain=domain)


# ======================================================================
# Meshes, solutions, peaks
# ======================================================================

def write_mesh(path: Path, mesh: Mesh) -> Path:
    return write_json(path, mesh.to_dict())


def load_mesh(path: Path) -> Mesh:
    return Mesh.from_dict(json.loads(Path(path).read_text()))


def write_solution(base: Path, mesh: Mesh, solution: SparseSolution,
                   fmt: str = "csv") -> List[Path]:
    """Write per-node coefficients plus a solver-metadata sidecar."""
    coords = ["x"] if mesh.dimension == 1 else ["x", "y"]
    rows = [[k, *mesh.nodes[k], solution.coefficients[k]]
            for k in range(mesh.nodes.shape[0])]
    table_path = write_table(Path(base), ["nodeIndex", *coords, "c"], rows, fmt)
    meta_path = write_json(Path(base).parent / (Path(base).stem + ".meta.json"),
                           solution.header_dict())
    return [table_path, meta_path]


def write_peaks(base: Path, peaks: Sequence[RecoveredPeak],
                fmt: str = "csv", dimension: Optional[int] = None) -> List[Path]:
    dim = dimension if dimension is not None else (len(peaks[0].location) if peaks else 1)
    coords = ["x"] if dim == 1 else ["x", "y"]
    rows = [[p.cluster_id, *p.location, p.amplitude, p.support_size, p.sign]
            for p in peaks]
    table_path = write_table(Path(base),
                             ["clusterId", *coords, "amplitude", "supportSize", "sign"],
                             rows, fmt)
    meta_path = write_json(Path(base).parent / (Path(base).stem + ".meta.json"),
                           {"peaks": [p.to_dict() for p in peaks]})
    return [table_path, meta_path]


def load_peaks(path: Path) -> List[RecoveredPeak]:
    """Read a peaks table (CSV or JSON) back into RecoveredPeak objects."""
    path = Path(path)
    if path.suffix == ".json":
        records = json.loads(path.read_text())
        rows = [[r["clusterId"], *r["location"], r["amplitude"],
                 r["supportSize"], r["sign"]] for r in records]
        dim = len(records[0]["location"]) if records else 1
    else:
        lines = path.read_text().strip().splitlines()
        header = lines[0].split(",")
        dim = header.index("amplitude") - 1
        rows = [line.split(",") for line in lines[1:]]
    peaks = []
    for cells in rows:
        peaks.append(RecoveredPeak(
            location=tuple(float(c) for c in cells[1:1 + dim]),
            amplitude=float(cells[1 + dim]),
            cluster_id=int(cells[0]),
            support_size=int(cells[2 + dim]),
            sign=int(float(cells[3 + dim]))))
    return peaks


# ======================================================================
# Fields, scans, manifest
# ======================================================================

def write_field_samples(base: Path, points: np.ndarray, p: np.ndarray,
                        q: np.ndarray, r: np.ndarray, fmt: str = "csv") -> Path:
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    coords = ["x"] if points.shape[1] == 1 else ["x", "y"]
    rows = [[*points[i], p[i], q[i], r[i]] for i in range(points.shape[0])]
    return write_table(Path(base), [*coords, "p", "q", "r"], rows, fmt)


def write_manifest(out_dir: Path, command: str, config_name: str,
                   config_digest: str, artifacts: Sequence[Path],
                   seed: Optional[int] = None) -> Path:
    """Record the config hash and a checksum for every artifact."""
    out_dir = Path(out_dir)
    checksums = {}
    for artifact in sorted(Path(a) for a in artifacts):
        checksums[artifact.relative_to(out_dir).as_posix()] = sha256_file(artifact)
    return write_json(out_dir / "manifest.json", {
        "command": command,
        "config": config_name,
        "configHash": config_digest,
        "seed": seed,
        "artifacts": checksums,
    })
