"""Run every experiment at desk scale and render summary figures.

Produces the full artefact tree under ``statfem-out/`` (or the directory
given as the first argument) in a few minutes, then renders a band grid,
a convergence plot and posterior histograms with the plotting package if
it is installed.

    python scripts/run_desk_suite.py [out_dir] [seed]
"""

from __future__ import annotations

import subprocess
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from statfem.experiments import EXPERIMENT_IDS, ExperimentConfig, run_experiment


def main() -> int:
    out_dir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("statfem-out")
    seed = int(sys.argv[2]) if len(sys.argv) > 2 else 20_210_614
    for experiment in EXPERIMENT_IDS:
        print(f"== {experiment} ==")
        manifest = run_experiment(
            ExperimentConfig(experiment=experiment, scale="desk", seed=seed, out_dir=out_dir)
        )
        print(f"   manifest: {manifest}")

    figures = [
        (
            ["loglog"]
            + sorted(str(p) for p in (out_dir / "convergence").glob("convergence_*.csv"))
            + ["-o", str(out_dir / "fig_convergence.png")]
        ),
        (
            ["band", str(out_dir / "random-source" / "field_u_post_ny33_no200.csv"),
             str(out_dir / "random-source" / "field_z_post_ny33_no200.csv"),
             "-o", str(out_dir / "fig_posterior_bands.png")]
        ),
        (
            ["histogram", str(out_dir / "random-source" / "chain_ny33_no1.csv"),
             str(out_dir / "random-source" / "chain_ny33_no200.csv"),
             "--param", "rho", "-o", str(out_dir / "fig_rho_posteriors.png")]
        ),
    ]
    try:
        from statfem_plot.cli import main as plot_main
    except ImportError:
        print("statfem-plot not installed; skipping figures")
        return 0
    for argv in figures:
        if plot_main(argv) != 0:
            return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
