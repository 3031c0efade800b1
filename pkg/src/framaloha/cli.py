"""Command-line front end: single-point analysis, parameter sweeps,
simulation, analysis-vs-simulation comparison and oracle checks.

Every run appends one CSV row per grid point under the documented schemas and
finishes by writing a manifest with the full experiment description and
per-file checksums.  Grid points are dispatched to a small worker pool; rows
are always written in grid order.
"""

import argparse
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__, output
from .aoi import avg_peak_aoi
from .core import ConfigError, SystemConfig, validate_config
from .fastsic import build_table_family
from .markov import solve_stationary
from .sic import cached_tables
from .sim import NUM_BATCHES, simulate, oracle_enumerate

OUTDIR_ENV = "FRAMALOHA_OUT"
WORKERS_ENV = "FRAMALOHA_WORKERS"
ORACLE_MAX_USERS = 3
ORACLE_MAX_CP = 4
ORACLE_TOL = 1e-9


@dataclass
class ExperimentSpec:
    """A fully resolved experiment: mode, base point, optional sweep grid."""

    mode: str                      # analyze | sweep-q | sweep-dmax | simulate | compare | oracle
    base: SystemConfig
    sweep_axis: str = "none"       # none | q | dmax
    grid: tuple = ()
    seed: int = 1
    num_cps: int = 100_000
    warmup_cps: int = 1_000
    outdir: Path = field(default_factory=lambda: Path(os.environ.get(OUTDIR_ENV, "out")))
    workers: int = 0               # 0 = auto
    coarse_q: tuple = ()           # coarse grid for the per-dmax q optimization
    emit_stationary: bool = False
    emit_tables: bool = False

    def __post_init__(self):
        if self.mode == "oracle":
            if self.base.num_users > ORACLE_MAX_USERS or self.base.max_cp_len > ORACLE_MAX_CP:
                raise ConfigError(
                    f"oracle mode enumerates exhaustively and needs num_users <= "
                    f"{ORACLE_MAX_USERS} and max_cp_len <= {ORACLE_MAX_CP}"
                )
        # every grid point must itself be a valid configuration
        for cfg in self.point_configs():
            assert isinstance(cfg, SystemConfig)

    def point_configs(self):
        if self.sweep_axis == "none":
            return [self.base]
        if self.sweep_axis == "q":
            return [self.base.with_tx_prob(q) for q in self.grid]
        if self.sweep_axis == "dmax":
            return [self.base.with_max_cp_len(d) for d in self.grid]
        raise ConfigError(f"unknown sweep axis {self.sweep_axis!r}")

    def describe(self) -> dict:
        d = asdict(self)
        d["outdir"] = str(self.outdir)
        d["grid"] = list(self.grid)
        d["coarse_q"] = list(self.coarse_q)
        return d


def analysis_row(cfg: SystemConfig, qstar: bool = False) -> dict:
    """One analytical CSV row: stationary throughput plus peak-age split."""
    tables = cached_tables(cfg)
    stat = solve_stationary(cfg, tables)
    age = avg_peak_aoi(cfg, tables)
    return {
        "source": "analysis",
        "U": cfg.num_users,
        "q": cfg.tx_prob,
        "gamma": cfg.gen_prob,
        "gammaU": cfg.load,
        "dmax": cfg.max_cp_len,
        "throughput": stat.throughput,
        "e_delta0": age.e_delta0,
        "e_y": age.e_y,
        "peak_aoi": age.peak_aoi,
        "mean_active": stat.mean_active,
        "qstar_flag": int(qstar),
    }


def simulation_row(cfg: SystemConfig, seed: int, num_cps: int, warmup_cps: int) -> dict:
    metrics = simulate(cfg, seed, num_cps, warmup_cps)
    return {
        "source": "sim",
        "U": cfg.num_users,
        "q": cfg.tx_prob,
        "gamma": cfg.gen_prob,
        "gammaU": cfg.load,
        "dmax": cfg.max_cp_len,
        "throughput": metrics.throughput,
        "e_delta0": float("nan"),
        "e_y": float("nan"),
        "peak_aoi": metrics.peak_aoi,
        "mean_active": metrics.mean_active,
        "qstar_flag": 0,
        "seed": seed,
        "n_cps": num_cps,
        "tput_ci": metrics.throughput_ci,
        "aoi_ci": metrics.peak_aoi_ci,
    }


def optimize_q(base: SystemConfig, coarse_q, coarse_S=None, rel_tol=0.01, max_iter=24):
    """Access probability maximizing throughput for one configuration.

    Scans the coarse grid, then golden-section-refines the bracketing
    interval on a log axis; falls back to the grid argmax when the bracket
    degenerates (optimum at a grid edge).
    """
    qs = list(coarse_q)
    if coarse_S is None:
        coarse_S = [solve_stationary(c, cached_tables(c)).throughput
                    for c in (base.with_tx_prob(q) for q in qs)]
    k = int(np.argmax(coarse_S))
    best_q, best_S = qs[k], coarse_S[k]
    if k == 0 or k == len(qs) - 1:
        return best_q, best_S  # optimum at the grid edge: nothing to bracket
    cache = {}

    def f(lq):
        if lq not in cache:
            c = base.with_tx_prob(10.0 ** lq)
            cache[lq] = solve_stationary(c, cached_tables(c)).throughput
        return cache[lq]

    lo, hi = math.log10(qs[k - 1]), math.log10(qs[k + 1])
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = hi - invphi * (hi - lo)
    x2 = lo + invphi * (hi - lo)
    for _ in range(max_iter):
        if hi - lo < math.log10(1.0 + rel_tol):
            break
        if f(x1) < f(x2):
            lo, x1 = x1, x2
            x2 = lo + invphi * (hi - lo)
        else:
            hi, x2 = x2, x1
            x1 = hi - invphi * (hi - lo)
    lq = max(cache, key=cache.get, default=None)
    if lq is not None and cache[lq] > best_S:
        best_q, best_S = 10.0 ** lq, cache[lq]
    return best_q, best_S


def _analysis_worker(cfg):
    return analysis_row(cfg)


def _resolve_workers(spec, n_points):
    if spec.workers > 0:
        return min(spec.workers, n_points)
    env = os.environ.get(WORKERS_ENV)
    if env:
        return min(int(env), n_points)
    # table construction is itself multi-threaded, so half the cores
    return max(1, min((os.cpu_count() or 1) // 2, n_points))


def _map_points(spec, worker, points):
    """Yield worker(point) in point order, rows arriving as workers finish."""
    n = _resolve_workers(spec, len(points))
    if n <= 1:
        for p in points:
            yield worker(p)
        return
    with ProcessPoolExecutor(max_workers=n) as pool:
        yield from pool.map(worker, points)


def _emit(files, outdir, name, columns, rows_iter):
    """Stream rows into outdir/name, keeping the written count in files even
    when the producer fails partway (the manifest then marks the run
    incomplete but still checksums the partial file)."""
    written = 0

    def counted():
        nonlocal written
        for row in rows_iter:
            yield row
            written += 1

    try:
        output.write_rows(outdir / name, columns, counted())
    finally:
        files[name] = written


def run(spec: ExperimentSpec) -> int:
    """Execute one experiment; returns the process exit status."""
    spec.outdir.mkdir(parents=True, exist_ok=True)
    files: dict = {}
    complete = False
    status = 0
    try:
        if spec.mode == "analyze":
            _emit(files, spec.outdir, "analysis.csv", output.ANALYSIS_COLUMNS,
                  (analysis_row(cfg) for cfg in spec.point_configs()))
            if spec.emit_stationary:
                stat = solve_stationary(spec.base, cached_tables(spec.base))
                for label, pmf in (("d", stat.pi_d), ("n", stat.pi_n), ("m", stat.pi_m)):
                    name = f"stationary_{label}.csv"
                    files[name] = output.write_distribution(spec.outdir / name, label, pmf)
            if spec.emit_tables:
                tables = cached_tables(spec.base)
                tables.write_csv(spec.outdir / "table_cp_len.csv",
                                 spec.outdir / "table_decoded.csv")
                files["table_cp_len.csv"] = (spec.base.num_users + 1) * spec.base.max_cp_len
                files["table_decoded.csv"] = (spec.base.num_users + 1) ** 2
        elif spec.mode == "sweep-q":
            _emit(files, spec.outdir, "sweep_q.csv", output.ANALYSIS_COLUMNS,
                  _map_points(spec, _analysis_worker, spec.point_configs()))
        elif spec.mode == "sweep-dmax":
            _emit(files, spec.outdir, "sweep_dmax.csv", output.ANALYSIS_COLUMNS,
                  _sweep_dmax_rows(spec))
        elif spec.mode == "simulate":
            _emit(files, spec.outdir, "simulation.csv", output.SIM_COLUMNS,
                  (simulation_row(cfg, spec.seed, spec.num_cps, spec.warmup_cps)
                   for cfg in spec.point_configs()))
            if spec.emit_stationary:
                metrics = simulate(spec.base, spec.seed, spec.num_cps, spec.warmup_cps)
                for label, pmf in (("d", metrics.pi_d), ("n", metrics.pi_n), ("m", metrics.pi_m)):
                    name = f"stationary_{label}_sim.csv"
                    files[name] = output.write_distribution(
                        spec.outdir / name, label, pmf, seed=spec.seed, n_cps=spec.num_cps)
        elif spec.mode == "compare":
            rows = []
            for cfg in spec.point_configs():
                rows.extend(_compare_rows(cfg, spec))
            _emit(files, spec.outdir, "compare.csv", output.COMPARE_COLUMNS, iter(rows))
            worst = max(abs(r["z"]) for r in rows if not math.isnan(r["z"]))
            print(f"compare: worst |z| = {worst:.2f} over {len(rows)} metric rows")
        elif spec.mode == "oracle":
            status = _run_oracle(spec, files)
        else:
            raise ConfigError(f"unknown mode {spec.mode!r}")
        complete = True
    finally:
        output.write_manifest(spec.outdir, spec.describe(), files, complete, __version__)
    return status


def _sweep_dmax_rows(spec):
    """Per maximum duration: optimize q for throughput, report both metrics.

    The coarse scan shares one state evolution per q across every duration
    (truncating a longer horizon reinterprets, not recomputes, the residual);
    golden refinement then works at each duration alone.  Yields one row per
    duration as soon as its optimization finishes.
    """
    d_grid = sorted(int(d) for d in spec.grid)
    d_top = d_grid[-1]
    coarse = list(spec.coarse_q)
    S = np.zeros((len(coarse), len(d_grid)))
    for i, q in enumerate(coarse):
        cfg_top = spec.base.with_tx_prob(q).with_max_cp_len(d_top)
        fam = build_table_family(cfg_top, d_grid)
        for j, d in enumerate(d_grid):
            S[i, j] = solve_stationary(fam[d].config, fam[d]).throughput
    for j, d in enumerate(d_grid):
        base_d = spec.base.with_max_cp_len(d)
        qstar, _ = optimize_q(base_d, coarse, coarse_S=S[:, j])
        yield analysis_row(base_d.with_tx_prob(qstar), qstar=True)


def _compare_rows(cfg, spec):
    ana = analysis_row(cfg)
    sim = simulation_row(cfg, spec.seed, spec.num_cps, spec.warmup_cps)
    stat = solve_stationary(cfg, cached_tables(cfg))
    simm = simulate(cfg, spec.seed, spec.num_cps, spec.warmup_cps)
    nb = min(NUM_BATCHES, spec.num_cps - spec.warmup_cps)
    tcrit = stats.t.ppf(0.975, nb - 1)
    head = {k: ana[k] for k in ("U", "q", "gamma", "gammaU", "dmax")}
    head.update({"seed": spec.seed, "n_cps": spec.num_cps})

    def zrow(metric, a, s, ci):
        z = (s - a) / (ci / tcrit) if ci and not math.isnan(ci) and ci > 0 else float("nan")
        return dict(head, metric=metric, analysis=a, sim=s, ci=ci, z=z)

    # mean_active has no batch CI; reuse the throughput batching scale-free form
    return [
        zrow("throughput", ana["throughput"], sim["throughput"], sim["tput_ci"]),
        zrow("peak_aoi", ana["peak_aoi"], sim["peak_aoi"], sim["aoi_ci"]),
        dict(head, metric="mean_active", analysis=stat.mean_active,
             sim=simm.mean_active, ci=float("nan"), z=float("nan")),
    ]


def _run_oracle(spec, files) -> int:
    cfg = spec.base
    tables = cached_tables(cfg)
    rows = []
    worst = 0.0
    for n in range(cfg.num_users + 1):
        p_d, p_m = oracle_enumerate(n, cfg.tx_prob, cfg.max_cp_len)
        dev_d = float(np.abs(tables.cp_len[:, n] - p_d).max())
        dev_m = float(np.abs(tables.decoded[: n + 1, n] - p_m).max())
        worst = max(worst, dev_d, dev_m)
        rows.append({"n": n, "max_dev_cp_len": dev_d, "max_dev_decoded": dev_m})
    files["oracle.csv"] = output.write_rows(
        spec.outdir / "oracle.csv", ["n", "max_dev_cp_len", "max_dev_decoded"], rows)
    ok = worst < ORACLE_TOL
    print(f"oracle: {'PASS' if ok else 'FAIL'} (max abs deviation {worst:.3e}, "
          f"tolerance {ORACLE_TOL:g})")
    return 0 if ok else 2


# ---------------------------------------------------------------------------
# argument parsing

def _read_config_file(path) -> dict:
    """Flat `key = value` lines; blank lines and # comments ignored."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        values[key.strip()] = val.strip()
    return values


_CONFIG_KEYS = {
    "users": int, "q": float, "gamma": float, "load": float, "dmax": int,
    "seed": int, "cps": int, "warmup": int, "out": str, "workers": int,
}


def _build_parser():
    p = argparse.ArgumentParser(
        prog="framaloha",
        description="Frameless ALOHA stationary throughput and peak-age toolkit",
    )
    sub = p.add_subparsers(dest="mode", required=True)

    def add_common(sp, with_q=True):
        sp.add_argument("--config", help="flat key=value config file; flags override it")
        sp.add_argument("--users", type=int, help="population size U")
        if with_q:
            sp.add_argument("--q", type=float, help="per-slot access probability")
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--gamma", type=float, help="per-slot per-user generation probability")
        g.add_argument("--load", type=float, help="aggregate load gamma*U")
        sp.add_argument("--dmax", type=int, help="maximum contention duration, slots")
        sp.add_argument("--out", help=f"output directory (default ${OUTDIR_ENV} or ./out)")
        sp.add_argument("--workers", type=int, help="worker pool size (default: cores/2)")

    sp = sub.add_parser("analyze", help="exact analysis at one parameter point")
    add_common(sp)
    sp.add_argument("--emit-stationary", action="store_true",
                    help="also write stationary distribution CSVs")
    sp.add_argument("--emit-tables", action="store_true",
                    help="also write the conditional-table CSVs")

    sp = sub.add_parser("sweep-q", help="analysis swept over the access probability")
    add_common(sp, with_q=False)
    sp.add_argument("--from", dest="q_from", type=float, required=True)
    sp.add_argument("--to", dest="q_to", type=float, required=True)
    sp.add_argument("--points", type=int, required=True)
    scale = sp.add_mutually_exclusive_group()
    scale.add_argument("--log", action="store_true", default=True,
                       help="logarithmic grid (default)")
    scale.add_argument("--linear", action="store_true")

    sp = sub.add_parser("sweep-dmax",
                        help="analysis swept over the maximum duration, q optimized per point")
    add_common(sp, with_q=False)
    sp.add_argument("--from", dest="d_from", type=int)
    sp.add_argument("--to", dest="d_to", type=int)
    sp.add_argument("--step", dest="d_step", type=int, default=10)
    sp.add_argument("--dmax-values", help="explicit comma-separated durations")
    sp.add_argument("--qmin", type=float, default=0.002)
    sp.add_argument("--qmax", type=float, default=0.5)
    sp.add_argument("--qpoints", type=int, default=20)

    sp = sub.add_parser("simulate", help="Monte Carlo simulation at one parameter point")
    add_common(sp)
    sp.add_argument("--seed", type=int, help="master RNG seed")
    sp.add_argument("--cps", type=int, help="contention periods to simulate")
    sp.add_argument("--warmup", type=int, help="contention periods excluded from metrics")
    sp.add_argument("--emit-stationary", action="store_true")

    sp = sub.add_parser("compare", help="side-by-side analysis and simulation with z-scores")
    add_common(sp)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--cps", type=int)
    sp.add_argument("--warmup", type=int)

    sp = sub.add_parser("oracle", help="check the tables against exhaustive enumeration")
    add_common(sp)
    return p


def parse_args(argv=None) -> ExperimentSpec:
    args = _build_parser().parse_args(argv)
    cfg_file = {}
    if getattr(args, "config", None):
        raw = _read_config_file(args.config)
        unknown = set(raw) - set(_CONFIG_KEYS)
        if unknown:
            raise ConfigError(f"config file: unknown key(s) {sorted(unknown)}")
        cfg_file = {k: _CONFIG_KEYS[k](v) for k, v in raw.items()}

    def pick(flag, key, default=None):
        v = getattr(args, flag, None)
        if v is not None and v is not False:
            return v
        return cfg_file.get(key, default)

    dmax_grid = None
    if args.mode == "sweep-dmax":
        if args.dmax_values:
            dmax_grid = [int(x) for x in args.dmax_values.split(",")]
        else:
            if args.d_from is None or args.d_to is None:
                raise ConfigError("sweep-dmax needs --from/--to or --dmax-values")
            dmax_grid = list(range(args.d_from, args.d_to + 1, args.d_step))
        if not dmax_grid or min(dmax_grid) < 1:
            raise ConfigError("sweep-dmax durations must be >= 1")

    params = {
        "num_users": pick("users", "users"),
        "max_cp_len": pick("dmax", "dmax", max(dmax_grid) if dmax_grid else None),
    }
    gamma, load = pick("gamma", "gamma"), pick("load", "load")
    if gamma is not None and load is not None:
        raise ConfigError("give gamma or load, not both")
    if gamma is not None:
        params["gen_prob"] = gamma
    elif load is not None:
        params["load"] = load
    q = pick("q", "q", 0.1 if args.mode in ("sweep-q", "sweep-dmax") else None)
    params["tx_prob"] = q
    missing = [k for k, v in params.items() if v is None]
    if missing or ("gen_prob" not in params and "load" not in params):
        need = missing + ([] if ("gen_prob" in params or "load" in params) else ["gamma|load"])
        raise ConfigError(f"missing required parameter(s): {need}")
    base = validate_config(params)

    spec_kw = dict(
        mode=args.mode,
        base=base,
        outdir=Path(pick("out", "out", os.environ.get(OUTDIR_ENV, "out"))),
        workers=int(pick("workers", "workers", 0) or 0),
    )
    if args.mode == "sweep-q":
        if args.q_from <= 0 or args.q_to <= 0 or args.q_from >= args.q_to:
            raise ConfigError("sweep-q needs 0 < from < to")
        if args.points < 2:
            raise ConfigError("sweep-q needs at least 2 points")
        if getattr(args, "linear", False):
            grid = np.linspace(args.q_from, args.q_to, args.points)
        else:
            grid = np.logspace(math.log10(args.q_from), math.log10(args.q_to), args.points)
        spec_kw.update(sweep_axis="q", grid=tuple(float(g) for g in grid))
    elif args.mode == "sweep-dmax":
        if args.qmin <= 0 or args.qmin >= args.qmax or args.qpoints < 3:
            raise ConfigError("bad coarse q grid for sweep-dmax")
        coarse = np.logspace(math.log10(args.qmin), math.log10(args.qmax), args.qpoints)
        spec_kw.update(sweep_axis="dmax", grid=tuple(sorted(set(dmax_grid))),
                       coarse_q=tuple(float(x) for x in coarse))
    if args.mode in ("simulate", "compare"):
        spec_kw.update(
            seed=int(pick("seed", "seed", 1)),
            num_cps=int(pick("cps", "cps", 100_000)),
            warmup_cps=int(pick("warmup", "warmup", 1_000)),
        )
    if args.mode in ("analyze", "simulate"):
        spec_kw["emit_stationary"] = bool(getattr(args, "emit_stationary", False))
    if args.mode == "analyze":
        spec_kw["emit_tables"] = bool(args.emit_tables)
    return ExperimentSpec(**spec_kw)


def main(argv=None) -> int:
    try:
        spec = parse_args(argv)
    except ConfigError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:
        # argparse exits 2 on usage problems and 0 for --help
        return 0 if e.code in (0, None) else 1
    try:
        return run(spec)
    except (ConfigError, ValueError, ArithmeticError, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
