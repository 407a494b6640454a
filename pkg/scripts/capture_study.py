"""Paired capture study: target selection on the 3v1 layout vs the frozen decoy layout.

    python3 scripts/capture_study.py --seeds 10
"""

import argparse

from mpe_games.config import load_config
from mpe_games.engine import run


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="configs/pursuit_3v1.toml")
    ap.add_argument("--paired", default="configs/decoy_3v3.toml")
    ap.add_argument("--seeds", type=int, default=10)
    args = ap.parse_args()
    print("seed  selection  frozen-decoy")
    for seed in range(args.seeds):
        t_sel = run(load_config(args.config, seed=seed)).all_captured_time
        t_dec = run(load_config(args.paired, seed=seed)).all_captured_time
        fmt = lambda t: "-" if t is None else f"{t:.2f}"
        print(f"{seed:4d}  {fmt(t_sel):>9}  {fmt(t_dec):>12}")


if __name__ == "__main__":
    main()
