"""Hamiltonians, tanh-saturated optimal policies and coupled HJI residuals."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .costs import _neighbour_rows, energy_integral, running_cost
from .dynamics import (
    AgentId,
    AgentModel,
    Controls,
    JointState,
    Models,
    all_agents,
    b_bar,
    error_rhs,
    local_errors,
)
from .topology import BiLayerTopology

# tanh(15) = 1 - 1.9e-13 < 1, so clipped arguments keep controls strictly inside
D_MAX = 15.0


@dataclass(frozen=True)
class ValueGradient:
    owner: AgentId
    grad: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.grad, float)
        if not np.all(np.isfinite(g)):
            raise ValueError("value gradient must be finite")
        object.__setattr__(self, "grad", g)


def tanh_argument(grad, channel, r, bound) -> np.ndarray:
    """``(1 / 2b) R^-1 C^T grad`` for a control channel ``C``."""
    r = np.asarray(r, float)
    r = np.diag(r) if r.ndim == 2 else r
    return (channel.T @ np.asarray(grad, float)) / (2.0 * bound * r)


def saturate(d, bound) -> np.ndarray:
    return -bound * np.tanh(np.clip(d, -D_MAX, D_MAX))


def saturated_policy(grad: ValueGradient | np.ndarray, model: AgentModel, b_bar_mat, r) -> np.ndarray:
    g = grad.grad if isinstance(grad, ValueGradient) else grad
    return saturate(tanh_argument(g, b_bar_mat, r, model.input_bound), model.input_bound)


def optimal_energy_term(grad, b_bar_mat, r, bound) -> float:
    """Closed form of ``U(u*)`` for the policy induced by ``grad``."""
    g = grad.grad if isinstance(grad, ValueGradient) else np.asarray(grad, float)
    r = np.asarray(r, float)
    r = np.diag(r) if r.ndim == 2 else r
    d = np.clip(tanh_argument(g, b_bar_mat, r, bound), -D_MAX, D_MAX)
    # b grad^T B_bar tanh(D) = 2 b^2 r D tanh(D) and ln(1 - tanh^2 D) = -2 ln cosh D,
    # written so neither term cancels catastrophically when tanh(D) rounds to 1
    a = np.abs(d)
    log_cosh = a + np.log1p(np.exp(-2.0 * a)) - np.log(2.0)
    return float(2.0 * bound**2 * r @ (d * np.tanh(d) - log_cosh))


def hamiltonian(owner, grad, state: JointState, controls: Controls, top, weights, models) -> float:
    g = grad.grad if isinstance(grad, ValueGradient) else np.asarray(grad, float)
    errs = local_errors(state, top)
    rhs = error_rhs(owner, state, controls, top, models)
    return running_cost(owner, errs, controls, top, weights, models) + float(g @ rhs)


GradientField = Callable[[AgentId, JointState, BiLayerTopology], np.ndarray] | Mapping


def _grad_of(field, agent, state, top):
    if callable(field):
        g = field(agent, state, top)
    else:
        if agent not in field:
            raise KeyError(f"no value-gradient provider for {agent}")
        g = field[agent]
    return g.grad if isinstance(g, ValueGradient) else np.asarray(g, float)


def policy_controls(grad_field, state, top, weights, models) -> Controls:
    """Everyone plays the saturated policy of their own value gradient."""
    agents = all_agents(top.n_pursuers, top.n_evaders)
    u = np.zeros((top.n_pursuers, models.m))
    v = np.zeros((top.n_evaders, models.m))
    for a in agents:
        g = _grad_of(grad_field, a, state, top)
        ctrl = saturated_policy(g, models[a], b_bar(a, top, models), weights[a].r_diag)
        (u if a.side == "p" else v)[a.index] = ctrl
    return Controls(u, v)


def hji_residual(owner, grad_field, state, top, weights, models) -> float:
    """Stationary coupled HJI left-hand side with all players on their saturated policies."""
    controls = policy_controls(grad_field, state, top, weights, models)
    return hamiltonian(owner, _grad_of(grad_field, owner, state, top), state, controls, top, weights, models)


def capture_margin(owner: AgentId, controls: Controls, top, weights, models, evaders=None, energies=None) -> float:
    """Own plus weighted teammates' energy minus targeted evaders' energy.

    ``evaders`` restricts the opponent sum (used by target selection); the
    default sums over every evader with a nonzero effective weight.
    ``energies`` optionally maps agents to precomputed control energies.
    """
    def energy(ag):
        if energies is not None and ag in energies:
            return energies[ag]
        return energy_integral(controls.of(ag), models[ag].input_bound, weights[ag].r_diag)

    cw, ow, _, _ = _neighbour_rows(owner, top)
    val = energy(owner)
    for k, c in enumerate(cw):
        if c:
            val += c * energy(AgentId("p", k))
    js = range(len(ow)) if evaders is None else evaders
    for j in js:
        c = top.cross.pe_weights[owner.index, j] if evaders is not None else ow[j]
        if c:
            val -= c * energy(AgentId("e", j))
    return float(val)
