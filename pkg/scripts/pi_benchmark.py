"""Policy iteration on a benchmark config; prints the value-change history.

    python3 scripts/pi_benchmark.py configs/pi_2v1.toml
"""

import argparse

from mpe_games.config import load_config
from mpe_games.engine import pi_samples, prepare
from mpe_games.learning import policy_iteration


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("config")
    ap.add_argument("--set", action="append", default=[])
    args = ap.parse_args()
    cfg = load_config(args.config, overrides=args.set)
    s = prepare(cfg, run_pi=False)
    p = cfg.raw["pi"]
    res = policy_iteration(s.approx, pi_samples(cfg, s.models), s.top, s.weights, s.models,
                           float(p["tolerance"]), int(p["max_iters"]), strict=False)
    for k, (h, b) in enumerate(zip(res.history, res.bellman), start=1):
        print(f"{k:3d}  value change {h:.3e}  mean |bellman| {b:.3e}")
    print("converged" if res.converged else "not converged")


if __name__ == "__main__":
    main()
