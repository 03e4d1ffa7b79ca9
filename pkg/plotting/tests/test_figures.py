import hashlib
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from statfem_plot import (
    FigureSpec,
    ParseError,
    fit_slope,
    plot_band,
    plot_convergence,
    plot_histogram,
    plot_ranking,
    render,
)
from statfem_plot.cli import main as cli_main


def write_field(path, n=21, width=0.1, mean_fn=np.sin):
    xs = np.linspace(0.0, 1.0, n)
    mean = mean_fn(np.pi * xs)
    lines = ["x,mean,lo95,hi95"]
    lines += [f"{x},{m},{m - width},{m + width}" for x, m in zip(xs, mean)]
    path.write_text("\n".join(lines) + "\n")
    return path


def write_chain(path, values, name="rho"):
    lines = [f"iter,{name},log_post,accepted"]
    lines += [f"{i},{v},0.0,1" for i, v in enumerate(values)]
    path.write_text("\n".join(lines) + "\n")
    return path


def write_convergence(path, hs, errors):
    lines = ["h,error"] + [f"{h},{e}" for h, e in zip(hs, errors)]
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture(scope="module")
def driver_output(tmp_path_factory):
    """Random-source experiment artefacts, produced through the CLI only."""
    out = tmp_path_factory.mktemp("driver")
    config = out / "config.json"
    config.write_text(
        json.dumps({"n_y": [4, 11, 33], "n_o": [1, 5, 10, 20], "iterations": 300})
    )
    subprocess.run(
        [
            sys.executable,
            "-m",
            "statfem.cli",
            "run",
            "random-source",
            "--scale",
            "desk",
            "--seed",
            "11",
            "--config",
            str(config),
            "--out",
            str(out),
        ],
        check=True,
        capture_output=True,
    )
    return out / "random-source"


def test_band_grid_matches_sensor_by_reading_sweep(driver_output, tmp_path):
    # Secondary acceptance: the experiment sweep renders as a 3x4 panel
    # grid, one panel per (sensor count, reading count) cell, and every
    # band file passed validation (mean inside the band at each abscissa).
    files = [
        driver_output / f"field_u_post_ny{n_y}_no{n_o}.csv"
        for n_y in (4, 11, 33)
        for n_o in (1, 5, 10, 20)
    ]
    assert all(f.is_file() for f in files)
    result = plot_band(files, tmp_path / "grid.png", grid=(3, 4))
    assert result["panels"] == 12
    assert result["series"] == 12
    assert (tmp_path / "grid.png").stat().st_size > 0
    print("\n[PASS] band grid: 3x4 panels, mean inside band at every abscissa")


def test_convergence_slope_annotation(tmp_path):
    # Secondary acceptance: synthetic quadratic data annotates slope 2.00.
    hs = np.array([1 / 8, 1 / 16, 1 / 32, 1 / 64, 1 / 128])
    path = write_convergence(tmp_path / "conv.csv", hs, 0.37 * hs**2)
    result = plot_convergence([path], tmp_path / "conv.png")
    slope = result["slopes"]["conv"]
    assert abs(slope - 2.00) <= 0.01
    # annotation must agree with an independent least-squares fit
    independent = np.polyfit(np.log(hs), np.log(0.37 * hs**2), 1)[0]
    assert slope == pytest.approx(independent, abs=1e-12)
    print(f"\n[PASS] convergence: annotated slope {slope:.2f} = 2.00 +- 0.01")


def test_band_overlay_and_ref_lines(tmp_path):
    a = write_field(tmp_path / "a.csv")
    b = write_field(tmp_path / "b.csv", mean_fn=np.cos)
    result = plot_band([a, b], tmp_path / "overlay.png", ref_lines=(0.0,))
    assert result["panels"] == 1 and result["series"] == 2


def test_band_rejects_inverted_interval(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x,mean,lo95,hi95\n0.0,1.0,1.5,2.0\n")
    with pytest.raises(ValueError, match="does not contain the mean"):
        plot_band([path], tmp_path / "bad.png")


def test_band_zero_width_band_allowed(tmp_path):
    path = write_field(tmp_path / "flat.csv", width=0.0, mean_fn=lambda x: np.ones_like(x))
    result = plot_band([path], tmp_path / "flat.png")
    assert result["series"] == 1


def test_parse_error_carries_line_number(tmp_path):
    path = tmp_path / "mangled.csv"
    path.write_text("x,mean,lo95,hi95\n0.0,1.0,0.9,1.1\noops,2,1,3\n")
    with pytest.raises(ParseError, match="mangled.csv:3"):
        plot_band([path], tmp_path / "x.png")
    with pytest.raises(ParseError, match=":1"):
        plot_band([write_convergence(tmp_path / "c.csv", [0.1], [0.2])], tmp_path / "y.png")


def test_plots_do_not_modify_inputs(tmp_path):
    path = write_field(tmp_path / "field.csv")
    before = hashlib.sha256(path.read_bytes()).hexdigest()
    plot_band([path], tmp_path / "out.png")
    assert hashlib.sha256(path.read_bytes()).hexdigest() == before


def test_same_inputs_pixel_identical(tmp_path):
    path = write_field(tmp_path / "field.csv")
    plot_band([path], tmp_path / "one.png")
    plot_band([path], tmp_path / "two.png")
    assert (tmp_path / "one.png").read_bytes() == (tmp_path / "two.png").read_bytes()


def test_histogram_density_and_overlays(tmp_path, driver_output):
    rng = np.random.default_rng(0)
    chains = [
        write_chain(tmp_path / f"chain_{k}.csv", rng.lognormal(size=400) * (k + 1))
        for k in range(3)
    ]
    result = plot_histogram(chains, tmp_path / "hist.png", burn_in=0.25)
    assert result["parameter"] == "rho"
    assert all(abs(v - 1.0) <= 1e-9 for v in result["integrals"])

    # driver chains carry several parameters; select one by name
    chain = driver_output / "chain_ny33_no20.csv"
    out = plot_histogram([chain], tmp_path / "ell.png", param="ell_d", ref_lines=(0.3,))
    assert out["parameter"] == "ell_d"


def test_histogram_single_sample_is_one_bar(tmp_path):
    path = write_chain(tmp_path / "single.csv", [2.5])
    result = plot_histogram([path], tmp_path / "single.png", burn_in=0.0)
    assert result["integrals"] == [1.0]


def test_histogram_empty_after_burn_in(tmp_path):
    path = write_chain(tmp_path / "short.csv", [1.0, 2.0])
    with pytest.raises(ValueError, match="burn-in"):
        plot_histogram([path], tmp_path / "x.png", burn_in=1.0)


def test_histogram_unknown_parameter(tmp_path):
    path = write_chain(tmp_path / "c.csv", [1.0, 2.0, 3.0])
    with pytest.raises(ValueError, match="no parameter"):
        plot_histogram([path], tmp_path / "x.png", param="nope")


def test_convergence_rejects_nonpositive(tmp_path):
    path = write_convergence(tmp_path / "neg.csv", [0.5, 0.25], [0.1, -0.2])
    with pytest.raises(ValueError, match="positive"):
        plot_convergence([path], tmp_path / "x.png")


def test_ranking_chart(driver_output, tmp_path):
    # build a ranking file through the primary CLI output contract
    out = tmp_path / "ranking.csv"
    out.write_text(
        "candidate,log_post_mean,log_post_std,rank\n"
        "h=1/4,10.0,1.0,2\nh=1/8,12.0,0.5,1\n"
    )
    result = plot_ranking([out], tmp_path / "rank.png")
    assert result["candidates"] == ["h=1/4", "h=1/8"]

    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    with pytest.raises(ParseError):
        plot_ranking([bad], tmp_path / "bad.png")


def test_figure_spec_validation(tmp_path):
    with pytest.raises(ValueError, match="kind"):
        FigureSpec(kind="pie", inputs=(tmp_path,), output=tmp_path / "x.png")
    with pytest.raises(ValueError, match="missing"):
        FigureSpec(kind="band", inputs=(tmp_path / "none.csv",), output=tmp_path / "x.png")
    with pytest.raises(ValueError, match="input"):
        FigureSpec(kind="band", inputs=(), output=tmp_path / "x.png")


def test_cli_round_trip(tmp_path):
    field = write_field(tmp_path / "field.csv")
    out = tmp_path / "cli.png"
    assert cli_main(["band", str(field), "-o", str(out), "--title", "demo"]) == 0
    assert out.is_file()

    conv = write_convergence(tmp_path / "c.csv", [0.5, 0.25, 0.125], [4e-2, 1e-2, 2.5e-3])
    assert cli_main(["loglog", str(conv), "-o", str(tmp_path / "c.png")]) == 0

    assert cli_main(["band", str(tmp_path / "absent.csv"), "-o", str(out)]) == 1


def test_render_dispatch(tmp_path):
    field = write_field(tmp_path / "f.csv")
    spec = FigureSpec(kind="band", inputs=(field,), output=tmp_path / "r.png")
    assert render(spec)["output"] == tmp_path / "r.png"


def test_fit_slope_exact_power_law():
    hs = np.array([0.5, 0.25, 0.125])
    assert fit_slope(hs, hs**3) == pytest.approx(3.0, abs=1e-12)
