"""Slightly altruistic running/terminal costs and the saturated energy term.

The energy of a bounded control is

    U(u) = 2 * int_0^u (b * atanh(nu / b))^T R dnu
         = 2 * sum_k r_k * b * (u_k atanh(u_k / b) + (b / 2) ln(1 - (u_k / b)^2))

which is finite only strictly inside the bound.  Cross terms between an
agent's local error and its neighbours' errors enter with a ``+`` sign for
pursuers (negated wholesale for evaders).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .dynamics import EVADER, PURSUER, AgentId, Controls, Models, degrees
from .errors import ConfigError, SaturationError
from .topology import BiLayerTopology


@dataclass(frozen=True)
class AltruismParams:
    mu: float = 0.0
    eta: float = 0.0
    gamma: np.ndarray = None
    rho: float = 0.0

    def __post_init__(self):
        for name in ("mu", "eta", "rho"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.gamma is not None:
            g = np.atleast_2d(np.asarray(self.gamma, float))
            if not np.allclose(g, g.T):
                raise ConfigError("gamma must be symmetric")
            object.__setattr__(self, "gamma", g)


@dataclass(frozen=True)
class CostWeights:
    lambda_team: np.ndarray
    lambda_cross: np.ndarray
    r_matrix: np.ndarray
    altruism: AltruismParams = field(default_factory=AltruismParams)
    # neighbour agent -> 2n x 2n cross weight (Q_ik, Q_ij^pe or Q_ji^ep)
    cross_q: Mapping[AgentId, np.ndarray] = field(default_factory=dict)
    terminal_scale: float = 1.0
    terminal_q: np.ndarray | None = None

    def __post_init__(self):
        lt = np.atleast_2d(np.asarray(self.lambda_team, float))
        lc = np.atleast_2d(np.asarray(self.lambda_cross, float))
        r = np.asarray(self.r_matrix, float)
        if r.ndim == 1:
            r = np.diag(r)
        if not (np.allclose(lt, lt.T) and np.allclose(lc, lc.T)):
            raise ConfigError("lambda matrices must be symmetric")
        if np.count_nonzero(r - np.diag(np.diag(r))) or np.any(np.diag(r) <= 0):
            raise ConfigError("R must be diagonal with strictly positive entries")
        object.__setattr__(self, "lambda_team", lt)
        object.__setattr__(self, "lambda_cross", lc)
        object.__setattr__(self, "r_matrix", r)

    @property
    def r_diag(self) -> np.ndarray:
        return np.diag(self.r_matrix)

    @property
    def gamma(self) -> np.ndarray:
        g = self.altruism.gamma
        return np.zeros_like(self.lambda_team) if g is None else g


def assemble_q_tilde(
    weights: CostWeights, a_team: float, a_cross: float, require_pd: bool = False
) -> np.ndarray:
    """Quadratic weight on the owner's own local error after folding in altruism."""
    if a_team < 0 or a_cross < 0:
        raise ValueError("degrees must be nonnegative")
    alt = weights.altruism
    s = 1.0 + alt.mu + alt.eta
    g = weights.gamma
    ct, cc = 1.0 + a_team, 1.0 + a_cross
    q = np.block(
        [
            [s * weights.lambda_team + g / ct**2, -g / (ct * cc)],
            [-g / (ct * cc), s * weights.lambda_cross + g / cc**2],
        ]
    )
    q = 0.5 * (q + q.T)
    if require_pd:
        eig = np.linalg.eigvalsh(q)
        if eig[0] <= 0:
            raise ConfigError(
                f"assembled pursuer weight is not positive definite: min eigenvalue {eig[0]:.6g} "
                f"(spectrum {np.array2string(eig, precision=4)})"
            )
    return q


def q_tilde_for(owner: AgentId, top: BiLayerTopology, weights: CostWeights, require_pd=False):
    a_team, a_cross = degrees(owner, top, effective=False)
    return assemble_q_tilde(weights, a_team, a_cross, require_pd=require_pd)


def _as_r(r, m):
    r = np.asarray(r, float)
    if r.ndim == 2:
        r = np.diag(r)
    return r if r.shape == (m,) else np.broadcast_to(r, (m,))


def energy_integral(u, bound: float, r) -> np.ndarray | float:
    """Saturated energy of ``u`` (last axis is the control dimension)."""
    u = np.asarray(u, float)
    x = u / bound
    if np.any(np.abs(x) >= 1.0):
        raise SaturationError(f"energy of a control at or beyond the bound {bound} diverges")
    r = _as_r(r, u.shape[-1])
    per = x * np.arctanh(x) + 0.5 * np.log1p(-x * x)
    out = 2.0 * bound * bound * (per @ r)
    return float(out) if out.ndim == 0 else out


def energy_gradient(u, bound: float, r) -> np.ndarray:
    u = np.asarray(u, float)
    x = u / bound
    if np.any(np.abs(x) >= 1.0):
        raise SaturationError(f"energy gradient at or beyond the bound {bound} diverges")
    return 2.0 * bound * np.arctanh(x) * _as_r(r, u.shape[-1])


def _energy(agent: AgentId, controls: Controls, models: Models, weights, cache=None) -> float:
    if cache is not None and agent in cache:
        return cache[agent]
    return energy_integral(controls.of(agent), models[agent].input_bound, weights[agent].r_diag)


def agent_energies(controls: Controls, models: Models, weights) -> dict:
    """Energy of every agent's control, for reuse across cost evaluations."""
    return {a: _energy(a, controls, models, weights) for a in weights}


def _neighbour_rows(owner: AgentId, top: BiLayerTopology):
    """Team and opponent weight rows used in costs (effective on the pursuer side)."""
    if owner.side == PURSUER:
        return top.gp.weights[owner.index], top.effective_pe[owner.index], PURSUER, EVADER
    return top.ge.weights[owner.index], top.cross.ep_weights[owner.index], EVADER, PURSUER


def _err(errors, agent: AgentId):
    dp, de = errors
    return (dp if agent.side == PURSUER else de)[agent.index]


def _cross_q(w: CostWeights, nb: AgentId, dim: int, scale=1.0):
    q = w.cross_q.get(nb)
    return np.zeros((dim, dim)) if q is None else scale * np.asarray(q)


def state_cost(owner, errors, top, weights, q_tilde=None, terminal=False) -> float:
    """Quadratic plus cross-error part of the running (or terminal) cost, signed."""
    w = weights[owner]
    d = _err(errors, owner)
    dim = d.shape[0]
    if q_tilde is None:
        q_tilde = q_tilde_for(owner, top, w)
    scale = w.terminal_scale if terminal else 1.0
    if terminal and w.terminal_q is not None:
        q = np.asarray(w.terminal_q)
    else:
        q = scale * q_tilde
    cw, ow, own_side, opp_side = _neighbour_rows(owner, top)
    acc = np.zeros(dim)
    for k, c in enumerate(cw):
        if c:
            nb = AgentId(own_side, k)
            acc += c * _cross_q(w, nb, dim, scale) @ _err(errors, nb)
    for j, c in enumerate(ow):
        if c:
            nb = AgentId(opp_side, j)
            acc += c * _cross_q(w, nb, dim, scale) @ _err(errors, nb)
    val = float(d @ q @ d + d @ acc)
    return val if owner.side == PURSUER else -val


def energy_cost(owner, controls, top, weights, models, energies=None) -> float:
    """Own + weighted teammates' energy minus weighted opponents' energy."""
    cw, ow, own_side, opp_side = _neighbour_rows(owner, top)
    val = _energy(owner, controls, models, weights, energies)
    for k, c in enumerate(cw):
        if c:
            val += c * _energy(AgentId(own_side, k), controls, models, weights, energies)
    for j, c in enumerate(ow):
        if c:
            val -= c * _energy(AgentId(opp_side, j), controls, models, weights, energies)
    return float(val)


def running_cost(owner, errors, controls, top, weights, models, q_tilde=None, energies=None) -> float:
    if len(_err(errors, owner)) != 2 * models.n:
        raise ValueError("local error dimension does not match the models")
    return (
        state_cost(owner, errors, top, weights, q_tilde)
        + energy_cost(owner, controls, top, weights, models, energies)
        + weights[owner].altruism.rho
    )


def terminal_cost(owner, errors, top, weights, q_tilde=None) -> float:
    return state_cost(owner, errors, top, weights, q_tilde, terminal=True)


def index_evaluate(owner, trace, weights, top, models) -> float:
    """Trapezoidal index of ``owner`` over a recorded trace plus the terminal cost.

    ``trace`` needs ``times``, ``errors``, ``controls`` and ``game_weights``
    sequences of equal length (see :class:`mpe_games.engine.SimulationTrace`).
    """
    if len(trace.times) == 0:
        raise ValueError("empty trace")
    q = q_tilde_for(owner, top, weights[owner])
    vals = []
    base = top
    for errs, ctrl, gw in zip(trace.errors, trace.controls, trace.game_weights):
        t = base if np.array_equal(gw, base.game_weights) else _with_game(base, gw)
        vals.append(running_cost(owner, errs, ctrl, t, weights, models, q))
    t_last = _with_game(base, trace.game_weights[-1])
    return float(np.trapezoid(vals, trace.times)) + terminal_cost(owner, trace.errors[-1], t_last, weights, q)


def _with_game(top: BiLayerTopology, gw) -> BiLayerTopology:
    return BiLayerTopology(top.gp, top.ge, top.cross, np.asarray(gw))
