"""Command line interface for running experiments and inspecting artefacts."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .experiments import EXPERIMENT_IDS, ExperimentConfig, run_experiment


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="statfem",
        description="Probabilistic finite element experiments and artefact tools",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment driver")
    run.add_argument("experiment", choices=EXPERIMENT_IDS)
    run.add_argument("--config", type=Path, help="JSON file with parameter overrides")
    run.add_argument("--scale", choices=("paper", "desk"), default=None)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", type=Path, default=None)

    mesh = sub.add_parser("mesh", help="mesh file tools")
    mesh_sub = mesh.add_subparsers(dest="mesh_command", required=True)
    info = mesh_sub.add_parser("info", help="print a summary of a mesh file")
    info.add_argument("file", type=Path)

    chain = sub.add_parser("chain", help="chain file tools")
    chain_sub = chain.add_subparsers(dest="chain_command", required=True)
    summarize = chain_sub.add_parser("summarize", help="print summary stats of a chain CSV")
    summarize.add_argument("file", type=Path)
    summarize.add_argument("--burn-in", type=float, default=0.3)

    return parser


def _cmd_run(args) -> int:
    file_cfg: dict = {}
    if args.config is not None:
        file_cfg = json.loads(args.config.read_text(encoding="utf-8"))
    scale = args.scale or file_cfg.get("scale", "paper")
    seed = args.seed if args.seed is not None else file_cfg.get("seed", 20_210_614)
    env_seed = os.environ.get("STATFEM_SEED")
    if env_seed is not None:
        seed = int(env_seed)
    out_dir = args.out or Path(file_cfg.get("out", "statfem-out"))
    overrides = {
        k: v for k, v in file_cfg.items() if k not in ("scale", "seed", "out", "experiment")
    }
    config = ExperimentConfig(
        experiment=args.experiment,
        scale=scale,
        seed=int(seed),
        out_dir=out_dir,
        overrides=overrides,
    )
    manifest = run_experiment(config)
    print(manifest)
    return 0


def _cmd_mesh_info(args) -> int:
    from .mesh import mesh_info, read_mesh_file

    info = mesh_info(read_mesh_file(args.file))
    for key, value in info.items():
        print(f"{key}: {value}")
    return 0


def _cmd_chain_summarize(args) -> int:
    from .hyperlearn import chain_summary, read_chain_csv, summary_dict

    chain = read_chain_csv(args.file, burn_in_fraction=args.burn_in)
    print(json.dumps(summary_dict(chain_summary(chain)), indent=2, sort_keys=True))
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "mesh":
            return _cmd_mesh_info(args)
        if args.command == "chain":
            return _cmd_chain_summarize(args)
    except Exception as err:  # surfaced as a clean failure for scripting
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
