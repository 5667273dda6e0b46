"""Tidy long-format CSV writers and the run manifest.

Every number is written with ``%.17g`` so files round-trip exactly and
reruns are byte-identical.
"""
from __future__ import annotations

import hashlib
import json
import platform
from pathlib import Path

import numpy as np

FMT = "%.17g"


def write_columns(path: Path, header: list[str], columns: list[np.ndarray]) -> Path:
    data = np.column_stack([np.asarray(c, dtype=float).reshape(-1) for c in columns])
    np.savetxt(path, data, fmt=FMT, delimiter=",", header=",".join(header), comments="")
    return path


def _long(times, axes: list[np.ndarray], values: np.ndarray) -> list[np.ndarray]:
    mesh = np.meshgrid(np.asarray(times, dtype=float), *axes, indexing="ij")
    return [m.reshape(-1) for m in mesh] + [np.asarray(values, dtype=float).reshape(-1)]


def write_scalar_field(path: Path, times, x, z, phi, name: str = "phi0") -> Path:
    """Columns ``t, x, z, <name>`` for an array of shape (nt, nx, nz)."""
    return write_columns(path, ["t", "x", "z", name], _long(times, [x, z], phi))


def write_field(path: Path, times, x, z, p, u, name: str = "u", time_name: str = "t") -> Path:
    """Columns ``t, x, z, p, <name>`` for an array of shape (nt, nx, nz, n_p)."""
    return write_columns(path, [time_name, "x", "z", "p", name], _long(times, [x, z, p], u))


def write_surface(path: Path, times, x, p, v, name: str = "v", time_name: str = "t") -> Path:
    """Columns ``t, x, p, <name>`` for an array of shape (nt, nx, n_p)."""
    return write_columns(path, [time_name, "x", "p", name], _long(times, [x, p], v))


def write_records(path: Path, records: list[dict], columns: list[str] | None = None) -> Path:
    """Rows of dictionaries; floats at full precision, other values as text."""
    if columns is None:
        columns = list(records[0]) if records else []
    lines = [",".join(columns)]
    for rec in records:
        cells = []
        for c in columns:
            val = rec[c]
            if isinstance(val, (bool, np.bool_)):
                cells.append(str(bool(val)).lower())
            elif isinstance(val, (float, np.floating, int, np.integer)):
                cells.append(FMT % val)
            else:
                cells.append(str(val))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()


def versions() -> dict:
    import scipy
    import yaml

    from . import __version__

    return {
        "polytransport": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pyyaml": yaml.__version__,
    }


def write_manifest(out_dir: Path, mode: str, config: dict, files: list[Path], extra: dict) -> Path:
    """``manifest.json`` listing every emitted file relative to ``out_dir``."""
    out_dir = Path(out_dir)
    manifest = {
        "mode": mode,
        "config_hash": config_hash(config),
        "config": config,
        "versions": versions(),
        "files": sorted(str(Path(f).relative_to(out_dir)) for f in files),
        **extra,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path
