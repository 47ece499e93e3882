"""CSV artifacts and run manifests with byte-stable formatting."""

from __future__ import annotations

import csv
import hashlib
import json
import platform
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


def format_value(v) -> str:
    """Render one cell; floats use 17 significant digits so the text round-trips."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if v == 0.0:
            return "0"  # folds -0.0 into 0
        return format(v, ".17g")
    if v is None:
        return ""
    return str(v)


def write_csv(path: Path | str, rows: Sequence[Mapping], columns: Sequence[str] | None = None) -> Path:
    """Write dict rows; columns default to the keys of the first row in insertion order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([format_value(row.get(c)) for c in columns])
    return path


def read_csv(path: Path | str) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, (set, frozenset, tuple)):
        return list(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def config_hash(config: Mapping) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def versions() -> dict:
    import scipy

    from . import __version__

    return {
        "ddztd": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


MANIFEST_VERSION = 1


def write_manifest(out_dir: Path | str, subcommand: str, config: Mapping, seed: int,
                   artifacts: Iterable[str], status: str, summary: Mapping | None = None) -> Path:
    """Record everything needed to rerun: the resolved config, its hash, seed and versions.

    No timestamps or host names are written, so identical runs give identical manifests.
    """
    out = Path(out_dir)
    doc = {
        "manifest_version": MANIFEST_VERSION,
        "subcommand": subcommand,
        "seed": int(seed),
        "config_hash": config_hash(config),
        "config": config,
        "versions": versions(),
        "artifacts": sorted(artifacts),
        "status": status,
        "summary": dict(summary or {}),
    }
    path = out / "manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True, indent=2, default=_jsonable) + "\n", encoding="utf-8")
    return path
