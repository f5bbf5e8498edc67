"""Command line entry point: ``pref-init-lab {run,sweep,heatmap}``.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .grid_env import GridEnv
from .harness import ConfigError, heatmap_csv, heatmap_pgm, parse_config, run_sweep
from .nn_core import InitScheme, load_checkpoint
from .reward_model import RewardNet, reward_heatmap

log = logging.getLogger("pref_init_lab")

SCHEMES = [s.value for s in InitScheme]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pref-init-lab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="single run of one arm and seed")
    run.add_argument("--config", type=Path)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--init", choices=SCHEMES, default=InitScheme.DATA_DRIVEN.value)
    run.add_argument("--grid-size", type=int)
    run.add_argument("--epsilon-init", type=float)
    run.add_argument("--total-env-steps", type=int)
    run.add_argument("--out-dir")

    sweep = sub.add_parser("sweep", help="every arm x seed, with mean/std curves")
    sweep.add_argument("--config", type=Path)
    sweep.add_argument("--seeds", help="comma-separated, e.g. 0,1,2")
    sweep.add_argument("--arms", help=f"comma-separated subset of {','.join(SCHEMES)}")
    sweep.add_argument("--grid-size", type=int)
    sweep.add_argument("--total-env-steps", type=int)
    sweep.add_argument("--workers", type=int)
    sweep.add_argument("--out-dir")

    hm = sub.add_parser("heatmap", help="per-cell max predicted reward from reward checkpoint(s)")
    hm.add_argument("--checkpoint", type=Path, nargs="+", required=True, help="one file per ensemble member")
    hm.add_argument("--grid-size", type=int, required=True)
    hm.add_argument("--out", type=Path, required=True, help=".csv or .pgm; any other suffix writes both")
    return parser


def _overrides(args: argparse.Namespace, keys: list[str]) -> dict:
    return {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}


def cmd_run(args) -> int:
    overrides = _overrides(args, ["grid_size", "epsilon_init", "total_env_steps", "out_dir"])
    overrides.update(seeds=[args.seed], arms=[args.init])
    cfg = parse_config(args.config, overrides)
    summary = run_sweep(cfg)
    run = summary.runs[0]
    if not run.valid:
        print(f"run failed: {run.error}", file=sys.stderr)
        return 2
    print(f"{run.arm} seed {run.seed}: final return {run.final_return:.4f}; artifacts in {cfg.out_dir}")
    return 0


def cmd_sweep(args) -> int:
    cfg = parse_config(args.config, _overrides(args, ["seeds", "arms", "grid_size", "total_env_steps", "workers", "out_dir"]))
    summary = run_sweep(cfg)
    for name, arm in summary.arms.items():
        status = "" if arm.complete else "  (incomplete)"
        print(f"{name:16s} final {arm.final_mean:10.4f} +- {arm.final_std:.4f}{status}")
    print(f"artifacts in {cfg.out_dir}")
    return 0 if all(a.complete for a in summary.arms.values()) else 2


def cmd_heatmap(args) -> int:
    try:
        env = GridEnv(args.grid_size)
    except ValueError as exc:
        raise ConfigError(f"grid_size: {exc}") from None
    members = [load_checkpoint(p) for p in args.checkpoint]
    for p, net in zip(args.checkpoint, members):
        if net.dims[0] != env.feature_dim:
            raise ConfigError(f"grid_size: {p} expects input width {net.dims[0]}, grid {env.n} gives {env.feature_dim}")
    model = RewardNet(members, InitScheme.KAIMING_UNIFORM)
    hm = reward_heatmap(model, env)
    out: Path = args.out
    if out.suffix == ".csv":
        out.write_text(heatmap_csv(hm))
    elif out.suffix == ".pgm":
        out.write_bytes(heatmap_pgm(hm))
    else:
        out.with_suffix(out.suffix + ".csv").write_text(heatmap_csv(hm))
        out.with_suffix(out.suffix + ".pgm").write_bytes(heatmap_pgm(hm))
    print(np.array2string(hm, precision=3, max_line_width=200))
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handlers = {"run": cmd_run, "sweep": cmd_sweep, "heatmap": cmd_heatmap}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
