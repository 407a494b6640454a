"""Compare the converged 1v1 critic with the zero-sum game Riccati solution."""

import argparse

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from mpe_games.config import load_config
from mpe_games.dynamics import AgentId
from mpe_games.engine import prepare
from mpe_games.learning import weights_to_matrix


def game_riccati(a, b, q, rp, re, iters=200):
    """Lyapunov iteration on A'P + PA + Q - P B (1/rp - 1/re) B' P = 0."""
    p = np.zeros_like(q)
    for _ in range(iters):
        kp = b.T @ p / rp
        ke = b.T @ p / re
        acl = a - b @ kp + b @ ke
        p = solve_continuous_lyapunov(acl.T, -(q + rp * kp.T @ kp - re * ke.T @ ke))
    return p


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("config", nargs="?", default="configs/riccati_1v1.toml")
    args = ap.parse_args()
    cfg = load_config(args.config)
    s = prepare(cfg)
    a, b, _ = cfg.dynamics()
    wp, we = s.weights[AgentId("p", 0)], s.weights[AgentId("e", 0)]
    p_game = game_riccati(a, b, wp.lambda_cross, wp.r_diag[0], we.r_diag[0])
    ap0 = s.approx[AgentId("p", 0)]
    p_learned = weights_to_matrix(ap0.critic.weights, ap0.basis.dim)
    print("Riccati:\n", p_game)
    print("policy iteration:\n", p_learned)
    print("max relative error:", np.max(np.abs(p_learned - p_game) / np.abs(p_game)))


if __name__ == "__main__":
    main()
