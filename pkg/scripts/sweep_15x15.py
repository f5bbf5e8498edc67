"""Data-driven vs Kaiming-uniform on the 15x15 grid, seeds 0-2.

    python3 scripts/sweep_15x15.py --out-dir runs/15x15
"""
import argparse
import logging
import time

from pref_init_lab.harness import parse_config, run_sweep


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--out-dir", default="runs/15x15")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--arms", default="data-driven,kaiming-uniform")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = parse_config(None, {"grid_size": 15, "arms": args.arms, "out_dir": args.out_dir, "workers": args.workers})
    t0 = time.perf_counter()
    summary = run_sweep(cfg)
    for arm, s in summary.arms.items():
        print(f"{arm:16s} final {s.final_mean:9.3f} +- {s.final_std:7.3f}")
    print(f"{(time.perf_counter() - t0) / 60:.1f} min, artifacts in {cfg.out_dir}")


if __name__ == "__main__":
    main()
