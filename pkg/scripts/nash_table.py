"""Unilateral actor-scaling deviations on the 2v2 benchmark (slow: ~3 min)."""

import argparse

from mpe_games.config import load_config
from mpe_games.engine import nash_perturbation_check, prepare


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="configs/pi_2v2.toml")
    ap.add_argument("--rollouts", type=int, default=30)
    args = ap.parse_args()
    cfg = load_config(args.config)
    s = prepare(cfg)
    for agent in s.agents:
        table = nash_perturbation_check(cfg, s.approx, agent, [1.0, 0.5, 0.8, 1.2, 1.5], args.rollouts)
        base = table[0]
        cells = "  ".join(f"{r['factor']:.1f}: {r['mean']:.4f}" for r in table)
        print(f"{agent}  {cells}  (se {base['se']:.4f})")


if __name__ == "__main__":
    main()
