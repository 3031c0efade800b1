"""CSV schemas, emitters/parsers and the reproducibility manifest.

Every emitter has a matching parser so rows round-trip exactly; floats are
written with repr precision.  The plotting layer consumes only these files.
"""

import csv
import hashlib
import json
from pathlib import Path

ANALYSIS_COLUMNS = [
    "source", "U", "q", "gamma", "gammaU", "dmax",
    "throughput", "e_delta0", "e_y", "peak_aoi", "mean_active", "qstar_flag",
]
SIM_EXTRA_COLUMNS = ["seed", "n_cps", "tput_ci", "aoi_ci"]
SIM_COLUMNS = ANALYSIS_COLUMNS + SIM_EXTRA_COLUMNS
COMPARE_COLUMNS = [
    "U", "q", "gamma", "gammaU", "dmax", "seed", "n_cps",
    "metric", "analysis", "sim", "ci", "z",
]

_INT_FIELDS = {"U", "dmax", "qstar_flag", "seed", "n_cps", "d", "n", "m", "rows"}
_STR_FIELDS = {"source", "metric"}


def _fmt(key, value):
    if key in _STR_FIELDS:
        return str(value)
    if key in _INT_FIELDS:
        return str(int(value))
    return repr(float(value))


def _parse(key, value):
    if key in _STR_FIELDS:
        return value
    if key in _INT_FIELDS:
        return int(value)
    return float(value)


def write_rows(path, columns, rows) -> int:
    """Write dict rows under a fixed column order; returns the row count.

    Rows are flushed as they are consumed, so a failing producer still leaves
    the completed prefix on disk.
    """
    path = Path(path)
    n = 0
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(columns)
        f.flush()
        for row in rows:
            extra = set(row) - set(columns)
            if extra:
                raise ValueError(f"row has undocumented fields {sorted(extra)}")
            w.writerow([_fmt(c, row[c]) if c in row else "" for c in columns])
            f.flush()
            n += 1
    return n


def read_rows(path, expected_columns=None):
    """Parse a CSV emitted by write_rows back into typed dict rows."""
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r)
        if expected_columns is not None and header != list(expected_columns):
            raise ValueError(f"{path}: header {header} != expected {list(expected_columns)}")
        out = []
        for raw in r:
            out.append({k: _parse(k, v) for k, v in zip(header, raw) if v != ""})
        return out


def distribution_columns(label, sim: bool):
    cols = [label, f"pi_{label}"]
    return (["source", "seed", "n_cps"] + cols) if sim else cols


def write_distribution(path, label, values, seed=None, n_cps=None) -> int:
    """Emit a stationary/empirical PMF; label is 'd', 'n' or 'm'.

    Analytical files carry (label, pi_label); simulation files prepend
    source=sim, seed and n_cps.
    """
    sim = seed is not None
    cols = distribution_columns(label, sim)
    start = 1 if label == "d" else 0
    rows = []
    for i, v in enumerate(values):
        row = {label: i + start, f"pi_{label}": float(v)}
        if sim:
            row.update({"source": "sim", "seed": seed, "n_cps": n_cps})
        rows.append(row)
    return write_rows(path, cols, rows)


def read_distribution(path):
    """Returns (label, numpy-free list of (index, mass)) from a PMF CSV."""
    rows = read_rows(path)
    if not rows:
        raise ValueError(f"{path}: empty distribution file")
    label = next(k for k in rows[0] if k in ("d", "n", "m"))
    return label, [(r[label], r[f"pi_{label}"]) for r in rows]


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(outdir, spec_dict, files, complete: bool, version: str) -> Path:
    """Record the experiment spec, tool version and per-file checksums.

    `files` maps relative file names to written row counts.  A manifest with
    complete=False marks a partially flushed experiment.
    """
    outdir = Path(outdir)
    manifest = {
        "tool": "framaloha",
        "version": version,
        "experiment": spec_dict,
        "complete": bool(complete),
        "files": {
            name: {"sha256": sha256_file(outdir / name), "rows": rows}
            for name, rows in sorted(files.items())
        },
    }
    path = outdir / "manifest.json"
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path
