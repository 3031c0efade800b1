"""Render experiment figures from framaloha CSV outputs.

Reads only the documented CSV schemas (no model quantity is ever recomputed
here) and one small declarative JSON figure description per invocation:

curve            y-vs-x lines per input file; simulation inputs (source=sim)
                 are drawn as points with confidence bars over the analytical
                 curves
histogram-pair   a duration-PMF row and a decoded-PMF row, one column per
                 labelled pair of stationary CSV files
parametric       (x, y) trajectories traced in row order (one per input)

Emits both PNG and PDF next to the requested stem.
"""

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

KINDS = ("curve", "histogram-pair", "parametric")
# confidence-interval column that accompanies each plottable metric
CI_COLUMNS = {"throughput": "tput_ci", "peak_aoi": "aoi_ci"}


class SchemaError(ValueError):
    """A referenced CSV column does not exist."""


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    out: Path
    inputs: tuple = ()
    pairs: tuple = ()
    x: str = ""
    y: str = ""
    logx: bool = False
    logy: bool = False
    xlabel: str = ""
    ylabel: str = ""
    title: str = ""
    order_by: str = ""

    @classmethod
    def from_file(cls, path) -> "FigureSpec":
        raw = json.loads(Path(path).read_text())
        kind = raw.get("kind")
        if kind not in KINDS:
            raise ValueError(f"figure kind must be one of {KINDS}, got {kind!r}")
        if "out" not in raw:
            raise ValueError("figure spec needs an 'out' stem")
        base = Path(path).parent
        inputs = tuple(
            (base / item["path"], item.get("label", Path(item["path"]).stem))
            for item in raw.get("inputs", ())
        )
        pairs = tuple(
            (item["label"], base / item["duration"], base / item["decoded"])
            for item in raw.get("pairs", ())
        )
        if kind == "histogram-pair":
            if not pairs:
                raise ValueError("histogram-pair needs a 'pairs' list")
        elif not inputs:
            raise ValueError(f"{kind} needs an 'inputs' list")
        return cls(
            kind=kind,
            out=base / raw["out"],
            inputs=inputs,
            pairs=pairs,
            x=raw.get("x", ""),
            y=raw.get("y", ""),
            logx=bool(raw.get("logx", False)),
            logy=bool(raw.get("logy", False)),
            xlabel=raw.get("xlabel", raw.get("x", "")),
            ylabel=raw.get("ylabel", raw.get("y", "")),
            title=raw.get("title", ""),
            order_by=raw.get("order_by", ""),
        )


def read_csv(path) -> dict:
    """Load a CSV as {column: list of floats-or-strings}."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header:
            raise SchemaError(f"{path}: empty file")
        cols = {name: [] for name in header}
        for row in reader:
            for name, value in zip(header, row):
                try:
                    cols[name].append(float(value))
                except ValueError:
                    cols[name].append(value)
    return cols


def column(cols, name, path):
    if name not in cols:
        raise SchemaError(f"{path}: missing column {name!r} (has {sorted(cols)})")
    return cols[name]


def _is_simulation(cols) -> bool:
    src = cols.get("source", [])
    return bool(src) and all(v == "sim" for v in src)


def build_figure(spec: FigureSpec):
    """Construct the matplotlib figure for a spec (pure in CSV content)."""
    if spec.kind == "curve":
        return _curve(spec)
    if spec.kind == "histogram-pair":
        return _histogram_pair(spec)
    return _parametric(spec)


def _sorted_xy(xs, ys, extra=None):
    order = sorted(range(len(xs)), key=lambda i: xs[i])
    out = ([xs[i] for i in order], [ys[i] for i in order])
    if extra is not None:
        return out + ([extra[i] for i in order],)
    return out


def _curve(spec):
    if not spec.x or not spec.y:
        raise ValueError("curve figures need 'x' and 'y' column names")
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    for path, label in spec.inputs:
        cols = read_csv(path)
        xs = column(cols, spec.x, path)
        ys = column(cols, spec.y, path)
        if _is_simulation(cols):
            ci_name = CI_COLUMNS.get(spec.y)
            if ci_name and ci_name in cols:
                xs, ys, ci = _sorted_xy(xs, ys, cols[ci_name])
                ax.errorbar(xs, ys, yerr=ci, fmt="o", ms=4, capsize=3, label=label)
            else:
                xs, ys = _sorted_xy(xs, ys)
                ax.plot(xs, ys, "o", ms=4, label=label)
        else:
            xs, ys = _sorted_xy(xs, ys)
            ax.plot(xs, ys, "-", label=label)
    if spec.logx:
        ax.set_xscale("log")
    if spec.logy:
        ax.set_yscale("log")
    _decorate(ax, spec)
    fig.tight_layout()
    return fig


def _histogram_pair(spec):
    ncol = len(spec.pairs)
    fig, axes = plt.subplots(2, ncol, figsize=(2.6 * ncol, 4.4), squeeze=False)
    for k, (label, d_path, m_path) in enumerate(spec.pairs):
        for row, (path, idx_name) in enumerate(((d_path, "d"), (m_path, "m"))):
            cols = read_csv(path)
            xs = column(cols, idx_name, path)
            ys = column(cols, f"pi_{idx_name}", path)
            ax = axes[row][k]
            ax.bar(xs, ys, width=1.0)
            ax.set_xlabel(idx_name)
            if k == 0:
                ax.set_ylabel(f"pi_{idx_name}")
            if row == 0:
                ax.set_title(label)
    if spec.title:
        fig.suptitle(spec.title)
    fig.tight_layout()
    return fig


def _parametric(spec):
    if not spec.x or not spec.y:
        raise ValueError("parametric figures need 'x' and 'y' column names")
    fig, ax = plt.subplots(figsize=(5.2, 3.8))
    for path, label in spec.inputs:
        cols = read_csv(path)
        xs = column(cols, spec.x, path)
        ys = column(cols, spec.y, path)
        if spec.order_by:
            keys = column(cols, spec.order_by, path)
            order = sorted(range(len(keys)), key=lambda i: keys[i])
            xs = [xs[i] for i in order]
            ys = [ys[i] for i in order]
        ax.plot(xs, ys, "o-", ms=4, label=label)
    _decorate(ax, spec)
    fig.tight_layout()
    return fig


def _decorate(ax, spec):
    ax.set_xlabel(spec.xlabel)
    ax.set_ylabel(spec.ylabel)
    if spec.title:
        ax.set_title(spec.title)
    ax.grid(True, alpha=0.4)
    ax.legend()


def render(spec: FigureSpec):
    """Write the figure as PNG and PDF; returns the two paths."""
    fig = build_figure(spec)
    png = spec.out.with_suffix(".png")
    pdf = spec.out.with_suffix(".pdf")
    png.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(png, dpi=160)
    fig.savefig(pdf)
    plt.close(fig)
    return png, pdf


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="aloha-figures", description="Render figures from framaloha CSV outputs")
    parser.add_argument("--spec", required=True, help="JSON figure description")
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    try:
        spec = FigureSpec.from_file(args.spec)
    except (ValueError, OSError, json.JSONDecodeError) as e:
        print(f"bad figure spec: {e}", file=sys.stderr)
        return 1
    try:
        png, pdf = render(spec)
    except (SchemaError, OSError) as e:
        print(f"render failed: {e}", file=sys.stderr)
        return 2
    print(f"wrote {png} and {pdf}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
