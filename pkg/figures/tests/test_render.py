import json
import shutil
import subprocess

import pytest

from aloha_figures import FigureSpec, SchemaError, build_figure, render

ANALYSIS_HEADER = ("source,U,q,gamma,gammaU,dmax,throughput,e_delta0,e_y,"
                   "peak_aoi,mean_active,qstar_flag")
SIM_HEADER = ANALYSIS_HEADER + ",seed,n_cps,tput_ci,aoi_ci"


def write_sweep_csv(path):
    rows = [
        f"analysis,10,0.02,0.06,0.6,10,0.21,4.0,30.0,34.0,2.1,0",
        f"analysis,10,0.1,0.06,0.6,10,0.45,3.0,12.0,15.0,1.4,0",
        f"analysis,10,0.4,0.06,0.6,10,0.08,6.0,80.0,86.0,3.0,0",
    ]
    path.write_text(ANALYSIS_HEADER + "\n" + "\n".join(rows) + "\n")


def write_sim_csv(path):
    rows = [
        "sim,10,0.1,0.06,0.6,10,0.44,nan,nan,15.4,1.45,0,7,5000,0.01,0.9",
        "sim,10,0.4,0.06,0.6,10,0.085,nan,nan,84.0,3.05,0,7,5000,0.004,2.0",
    ]
    path.write_text(SIM_HEADER + "\n" + "\n".join(rows) + "\n")


def write_pmf_csv(path, label, values):
    start = 1 if label == "d" else 0
    lines = [f"{label},pi_{label}"]
    lines += [f"{i + start},{v}" for i, v in enumerate(values)]
    path.write_text("\n".join(lines) + "\n")


def curve_spec(tmp_path, with_sim=True):
    write_sweep_csv(tmp_path / "sweep_q.csv")
    inputs = [{"path": "sweep_q.csv", "label": "analysis"}]
    if with_sim:
        write_sim_csv(tmp_path / "simulation.csv")
        inputs.append({"path": "simulation.csv", "label": "simulation"})
    spec = {
        "kind": "curve", "out": "fig_curve", "x": "q", "y": "throughput",
        "logx": True, "xlabel": "access probability", "ylabel": "throughput",
        "inputs": inputs,
    }
    p = tmp_path / "curve.json"
    p.write_text(json.dumps(spec))
    return p


def test_curve_renders_png_and_pdf(tmp_path):
    spec = FigureSpec.from_file(curve_spec(tmp_path))
    png, pdf = render(spec)
    assert png.exists() and png.stat().st_size > 1000
    assert pdf.exists() and pdf.stat().st_size > 500


def test_curve_overlays_simulation_points(tmp_path):
    fig = build_figure(FigureSpec.from_file(curve_spec(tmp_path)))
    ax = fig.axes[0]
    assert len(ax.lines) >= 2          # analysis line + sim markers
    assert len(ax.containers) == 1     # one errorbar container for the CIs


def test_histogram_pair(tmp_path):
    write_pmf_csv(tmp_path / "sd1.csv", "d", [0.2, 0.3, 0.5])
    write_pmf_csv(tmp_path / "sm1.csv", "m", [0.6, 0.3, 0.1])
    write_pmf_csv(tmp_path / "sd2.csv", "d", [0.1, 0.1, 0.8])
    write_pmf_csv(tmp_path / "sm2.csv", "m", [0.9, 0.05, 0.05])
    spec_path = tmp_path / "hist.json"
    spec_path.write_text(json.dumps({
        "kind": "histogram-pair", "out": "fig_hist",
        "pairs": [
            {"label": "q=0.01", "duration": "sd1.csv", "decoded": "sm1.csv"},
            {"label": "q=0.15", "duration": "sd2.csv", "decoded": "sm2.csv"},
        ],
    }))
    spec = FigureSpec.from_file(spec_path)
    fig = build_figure(spec)
    assert len(fig.axes) == 4          # 2 rows x 2 operating points
    png, pdf = render(spec)
    assert png.exists() and pdf.exists()


def test_parametric(tmp_path):
    (tmp_path / "sweep_dmax.csv").write_text(
        ANALYSIS_HEADER + "\n"
        "analysis,10,0.3,0.06,0.6,8,0.30,3.0,20.0,23.0,1.2,1\n"
        "analysis,10,0.25,0.06,0.6,4,0.22,2.0,26.0,28.0,1.0,1\n"
        "analysis,10,0.2,0.06,0.6,12,0.33,4.0,21.0,25.0,1.5,1\n")
    spec_path = tmp_path / "par.json"
    spec_path.write_text(json.dumps({
        "kind": "parametric", "out": "fig_par", "x": "throughput",
        "y": "peak_aoi", "order_by": "dmax",
        "inputs": [{"path": "sweep_dmax.csv", "label": "load 0.6"}],
    }))
    fig = build_figure(FigureSpec.from_file(spec_path))
    line = fig.axes[0].lines[0]
    # traced in dmax order: 4, 8, 12
    assert list(line.get_xdata()) == [0.22, 0.30, 0.33]
    render(FigureSpec.from_file(spec_path))


def test_missing_column_fails_loudly(tmp_path):
    (tmp_path / "bad.csv").write_text("q,peak_aoi\n0.1,15.0\n")
    spec_path = tmp_path / "bad.json"
    spec_path.write_text(json.dumps({
        "kind": "curve", "out": "x", "x": "q", "y": "throughput",
        "inputs": [{"path": "bad.csv", "label": "z"}],
    }))
    with pytest.raises(SchemaError, match="throughput"):
        build_figure(FigureSpec.from_file(spec_path))


def test_rendering_is_pure(tmp_path):
    spec = FigureSpec.from_file(curve_spec(tmp_path))
    a = build_figure(spec)
    b = build_figure(spec)
    for la, lb in zip(a.axes[0].lines, b.axes[0].lines):
        assert list(la.get_xdata()) == list(lb.get_xdata())
        assert list(la.get_ydata()) == list(lb.get_ydata())


def test_bad_kind_rejected(tmp_path):
    spec_path = tmp_path / "bad.json"
    spec_path.write_text(json.dumps({"kind": "pie", "out": "x", "inputs": []}))
    with pytest.raises(ValueError, match="kind"):
        FigureSpec.from_file(spec_path)


def test_cli_exit_codes(tmp_path):
    from aloha_figures.render import main
    spec_path = curve_spec(tmp_path)
    assert main(["--spec", str(spec_path)]) == 0
    (tmp_path / "sweep_q.csv").write_text("a,b\n1,2\n")
    assert main(["--spec", str(spec_path)]) == 2
    assert main(["--spec", str(tmp_path / "missing.json")]) == 1


@pytest.mark.skipif(shutil.which("framaloha") is None,
                    reason="primary CLI not installed")
def test_end_to_end_from_primary_cli(tmp_path):
    """Every figure kind rendered from files the real CLI emitted."""
    def cli(*args):
        subprocess.run(["framaloha", *args], check=True, capture_output=True)

    base = "--users 6 --load 0.6".split()
    cli("sweep-q", *base, "--dmax", "6", "--from", "0.05", "--to", "0.8",
        "--points", "5", "--out", str(tmp_path / "sweepq"))
    cli("simulate", *base, "--dmax", "6", "--q", "0.3", "--seed", "5",
        "--cps", "4000", "--warmup", "100", "--out", str(tmp_path / "sim"))
    for q in ("0.1", "0.4"):
        cli("analyze", *base, "--dmax", "6", "--q", q, "--emit-stationary",
            "--out", str(tmp_path / f"pt{q}"))
    cli("sweep-dmax", *base, "--dmax-values", "3,6", "--qpoints", "5",
        "--qmin", "0.05", "--qmax", "0.8", "--out", str(tmp_path / "sweepd"))

    specs = [
        {"kind": "curve", "out": "fig_curve", "x": "q", "y": "throughput",
         "logx": True, "inputs": [
             {"path": "sweepq/sweep_q.csv", "label": "analysis"},
             {"path": "sim/simulation.csv", "label": "simulation"}]},
        {"kind": "histogram-pair", "out": "fig_hist", "pairs": [
            {"label": f"q={q}", "duration": f"pt{q}/stationary_d.csv",
             "decoded": f"pt{q}/stationary_m.csv"} for q in ("0.1", "0.4")]},
        {"kind": "parametric", "out": "fig_par", "x": "throughput",
         "y": "peak_aoi", "order_by": "dmax",
         "inputs": [{"path": "sweepd/sweep_dmax.csv", "label": "load 0.6"}]},
    ]
    for raw in specs:
        spec_path = tmp_path / f"{raw['out']}.json"
        spec_path.write_text(json.dumps(raw))
        png, pdf = render(FigureSpec.from_file(spec_path))
        assert png.exists() and pdf.exists()
