"""Initial reward heatmaps of every arm, before any preference feedback.

Writes one PGM montage (rows = arms, columns = seeds, cells upscaled) and
prints the per-arm cell standard deviation.  No training steps are run, so
this takes seconds.

    python3 scripts/init_heatmaps.py --grid-size 15 --out init_15.pgm
"""
import argparse

import numpy as np

from pref_init_lab.harness import DEFAULT_ARMS, heatmap_pgm
from pref_init_lab.pbrl_loop import LoopConfig, run_experiment


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--grid-size", type=int, default=7)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--scale", type=int, default=8, help="pixels per cell")
    p.add_argument("--out", default="init_heatmaps.pgm")
    args = p.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]

    pad = 1.0  # white separator
    rows = []
    for arm in DEFAULT_ARMS:
        tiles, stds = [], []
        for seed in seeds:
            cfg = LoopConfig(grid_size=args.grid_size, init_scheme=arm, total_env_steps=0)
            hm = run_experiment(cfg, seed).initial_heatmap
            stds.append(hm.std())
            tile = np.kron(hm, np.ones((args.scale, args.scale)))
            tiles += [tile, np.full((tile.shape[0], 2), pad)]
        rows.append(np.hstack(tiles[:-1]))
        rows.append(np.full((2, rows[-1].shape[1]), pad))
        print(f"{arm.value:16s} cell std " + "  ".join(f"{s:.4f}" for s in stds))
    with open(args.out, "wb") as fh:
        fh.write(heatmap_pgm(np.vstack(rows[:-1])))
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
