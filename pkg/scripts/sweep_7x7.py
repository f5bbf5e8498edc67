"""Six-arm, three-seed sweep on the 7x7 grid; prints final-return mean/std per arm.

    python3 scripts/sweep_7x7.py --out-dir runs/7x7 [--workers N]
"""
import argparse
import logging
import time

from pref_init_lab.harness import parse_config, run_sweep


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--out-dir", default="runs/7x7")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--config", help="optional JSON config; flags above win")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = parse_config(args.config, {"grid_size": 7, "out_dir": args.out_dir, "workers": args.workers})
    t0 = time.perf_counter()
    summary = run_sweep(cfg)
    for arm, s in summary.arms.items():
        print(f"{arm:16s} final {s.final_mean:9.3f} +- {s.final_std:7.3f}  labels {s.oracle_label_counts}")
    print(f"{(time.perf_counter() - t0) / 60:.1f} min, artifacts in {cfg.out_dir}")


if __name__ == "__main__":
    main()
