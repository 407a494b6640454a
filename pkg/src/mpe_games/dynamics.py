"""Linear agent dynamics, augmented local errors and their time derivatives.

Every agent shares the state matrix ``A``; input matrices and bounds are per
agent.  A local error is ``2n``-dimensional: the weighted disagreement with
teammates stacked over the weighted offset from neighbouring opponents.
Pursuer opponent blocks use the game-masked weights; evader opponent blocks
never do.

Joint positions are flattened as ``X = [x_p0, ..., x_p(N-1), x_e0, ...]`` when
a linear map onto local errors is needed (:func:`error_map`).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, SaturationError
from .topology import BiLayerTopology, cross_in_degrees

PURSUER, EVADER = "p", "e"


class AgentId(NamedTuple):
    side: str
    index: int

    def __str__(self):
        return f"{self.side}{self.index}"

    @classmethod
    def parse(cls, text: str) -> "AgentId":
        side, idx = text[0], text[1:]
        if side not in (PURSUER, EVADER) or not idx.isdigit():
            raise ValueError(f"bad agent id {text!r}; expected e.g. 'p0' or 'e1'")
        return cls(side, int(idx))


def all_agents(n_pursuers: int, n_evaders: int) -> list[AgentId]:
    return [AgentId(PURSUER, i) for i in range(n_pursuers)] + [
        AgentId(EVADER, j) for j in range(n_evaders)
    ]


def controllability_rank(a: np.ndarray, b: np.ndarray) -> int:
    n = a.shape[0]
    blocks, cur = [], b
    for _ in range(n):
        blocks.append(cur)
        cur = a @ cur
    return int(np.linalg.matrix_rank(np.hstack(blocks)))


@dataclass(frozen=True)
class AgentModel:
    a_matrix: np.ndarray
    b_matrix: np.ndarray
    input_bound: float
    side: str = PURSUER

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a_matrix, float))
        b = np.asarray(self.b_matrix, float)
        if b.ndim == 1:
            b = b.reshape(-1, 1)
        if a.shape[0] != a.shape[1] or b.shape[0] != a.shape[0]:
            raise ConfigError(f"incompatible A {a.shape} and B {b.shape}")
        if not self.input_bound > 0:
            raise ConfigError(f"input bound must be positive, got {self.input_bound}")
        if controllability_rank(a, b) < a.shape[0]:
            raise ConfigError("(A, B) is not controllable")
        object.__setattr__(self, "a_matrix", a)
        object.__setattr__(self, "b_matrix", b)
        object.__setattr__(self, "input_bound", float(self.input_bound))

    @property
    def n(self) -> int:
        return self.a_matrix.shape[0]

    @property
    def m(self) -> int:
        return self.b_matrix.shape[1]


@dataclass(frozen=True)
class Models:
    pursuers: tuple[AgentModel, ...]
    evaders: tuple[AgentModel, ...]

    def __post_init__(self):
        allm = list(self.pursuers) + list(self.evaders)
        if not allm:
            raise ConfigError("no agents")
        a0 = allm[0].a_matrix
        for mdl in allm:
            if mdl.a_matrix.shape != a0.shape or not np.array_equal(mdl.a_matrix, a0):
                raise ConfigError("all agents must share the state matrix A")
            if mdl.m != allm[0].m:
                raise ConfigError("all agents must share the input dimension m")

    def __getitem__(self, agent: AgentId) -> AgentModel:
        return (self.pursuers if agent.side == PURSUER else self.evaders)[agent.index]

    @property
    def a_matrix(self) -> np.ndarray:
        return (self.pursuers or self.evaders)[0].a_matrix

    @property
    def n(self) -> int:
        return self.a_matrix.shape[0]

    @property
    def m(self) -> int:
        return (self.pursuers or self.evaders)[0].m


@dataclass(frozen=True)
class JointState:
    pursuers: np.ndarray
    evaders: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.pursuers, float))
        e = np.atleast_2d(np.asarray(self.evaders, float))
        if p.shape[1] != e.shape[1]:
            raise ValueError("pursuer and evader states differ in dimension")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(e))):
            raise ValueError("joint state contains non-finite entries")
        object.__setattr__(self, "pursuers", p)
        object.__setattr__(self, "evaders", e)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.pursuers.ravel(), self.evaders.ravel()])

    @classmethod
    def from_flat(cls, x: np.ndarray, n_pursuers: int, n: int, time: float = 0.0):
        x = np.asarray(x, float)
        k = n_pursuers * n
        return cls(x[:k].reshape(n_pursuers, n), x[k:].reshape(-1, n), time)

    def of(self, agent: AgentId) -> np.ndarray:
        return (self.pursuers if agent.side == PURSUER else self.evaders)[agent.index]


class Controls(NamedTuple):
    u: np.ndarray  # (N, m)
    v: np.ndarray  # (M, m)

    def of(self, agent: AgentId) -> np.ndarray:
        return (self.u if agent.side == PURSUER else self.v)[agent.index]


@dataclass(frozen=True)
class LocalError:
    teammate_block: np.ndarray
    opponent_block: np.ndarray
    owner: AgentId

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.teammate_block, self.opponent_block])


def _weights_for(owner: AgentId, top: BiLayerTopology):
    """(team weight row, opponent weight row) as used in error construction."""
    if owner.side == PURSUER:
        return top.gp.weights[owner.index], top.effective_pe[owner.index]
    return top.ge.weights[owner.index], top.cross.ep_weights[owner.index]


def degrees(owner: AgentId, top: BiLayerTopology, effective: bool = True):
    """(team degree, cross degree) of ``owner``.  Evader cross degrees are never masked."""
    d_pe, d_ep = cross_in_degrees(top, effective=effective)
    if owner.side == PURSUER:
        return float(top.gp.weights[owner.index].sum()), float(d_pe[owner.index])
    return float(top.ge.weights[owner.index].sum()), float(d_ep[owner.index])


def _check_dims(state: JointState, top: BiLayerTopology):
    if state.pursuers.shape[0] != top.n_pursuers or state.evaders.shape[0] != top.n_evaders:
        raise ValueError(
            f"state has {state.pursuers.shape[0]}v{state.evaders.shape[0]} agents, "
            f"topology {top.n_pursuers}v{top.n_evaders}"
        )


def _teams(owner: AgentId, state: JointState):
    if owner.side == PURSUER:
        return state.pursuers, state.evaders
    return state.evaders, state.pursuers


def local_error(owner: AgentId, state: JointState, top: BiLayerTopology) -> LocalError:
    _check_dims(state, top)
    own, opp = _teams(owner, state)
    if not 0 <= owner.index < own.shape[0]:
        raise ValueError(f"unknown agent {owner}")
    cw, ow = _weights_for(owner, top)
    x = own[owner.index]
    team = cw.sum() * x - cw @ own
    oppb = ow.sum() * x - ow @ opp
    return LocalError(team, oppb, owner)


def local_errors(state: JointState, top: BiLayerTopology):
    """All local errors at once: arrays of shape (N, 2n) and (M, 2n)."""
    _check_dims(state, top)
    p, e = state.pursuers, state.evaders
    cp, ce = top.gp.weights, top.ge.weights
    pe, ep = top.effective_pe, top.cross.ep_weights
    dp = np.hstack([cp.sum(1)[:, None] * p - cp @ p, pe.sum(1)[:, None] * p - pe @ e])
    de = np.hstack([ce.sum(1)[:, None] * e - ce @ e, ep.sum(1)[:, None] * e - ep @ p])
    return dp, de


def b_bar(owner: AgentId, top: BiLayerTopology, models: Models) -> np.ndarray:
    """Own-control channel ``[a_team B; a_cross B]`` with current effective degrees."""
    a_team, a_cross = degrees(owner, top, effective=True)
    b = models[owner].b_matrix
    return np.vstack([a_team * b, a_cross * b])


def check_saturation(controls: Controls, models: Models):
    for side, arr, mdls in ((PURSUER, controls.u, models.pursuers), (EVADER, controls.v, models.evaders)):
        for k, mdl in enumerate(mdls):
            if np.any(np.abs(arr[k]) > mdl.input_bound):
                raise SaturationError(
                    f"control of {side}{k} = {arr[k]} exceeds bound {mdl.input_bound}"
                )


def error_rhs(
    owner: AgentId,
    state: JointState,
    controls: Controls,
    top: BiLayerTopology,
    models: Models,
    check: bool = True,
) -> np.ndarray:
    """Time derivative of ``owner``'s local error under the given controls."""
    if check:
        check_saturation(controls, models)
    delta = local_error(owner, state, top).vector
    a = models.a_matrix
    n = a.shape[0]
    out = np.concatenate([a @ delta[:n], a @ delta[n:]])
    out += b_bar(owner, top, models) @ controls.of(owner)
    cw, ow = _weights_for(owner, top)
    if owner.side == PURSUER:
        own_c, opp_c, own_m, opp_m = controls.u, controls.v, models.pursuers, models.evaders
    else:
        own_c, opp_c, own_m, opp_m = controls.v, controls.u, models.evaders, models.pursuers
    for k, w in enumerate(cw):
        if w:
            out[:n] -= w * own_m[k].b_matrix @ own_c[k]
    for j, w in enumerate(ow):
        if w:
            out[n:] -= w * opp_m[j].b_matrix @ opp_c[j]
    return out


def state_rates(state: JointState, controls: Controls, models: Models):
    a = models.a_matrix
    dp = state.pursuers @ a.T
    de = state.evaders @ a.T
    for i, mdl in enumerate(models.pursuers):
        dp[i] += mdl.b_matrix @ controls.u[i]
    for j, mdl in enumerate(models.evaders):
        de[j] += mdl.b_matrix @ controls.v[j]
    return dp, de


def team_center(owner: AgentId, state: JointState, top: BiLayerTopology) -> np.ndarray:
    own, _ = _teams(owner, state)
    cw, _ = _weights_for(owner, top)
    return (own[owner.index] + cw @ own) / (1.0 + cw.sum())


def adversary_center(owner: AgentId, state: JointState, top: BiLayerTopology) -> np.ndarray:
    own, opp = _teams(owner, state)
    _, ow = _weights_for(owner, top)
    return (own[owner.index] + ow @ opp) / (1.0 + ow.sum())


def error_map(owner: AgentId, top: BiLayerTopology, n: int) -> np.ndarray:
    """Matrix ``M`` with ``delta_owner = M @ X`` for flattened joint positions ``X``."""
    n_p, n_e = top.n_pursuers, top.n_evaders
    cw, ow = _weights_for(owner, top)
    own_off = 0 if owner.side == PURSUER else n_p
    opp_off = n_p if owner.side == PURSUER else 0
    team_row = np.zeros(n_p + n_e)
    opp_row = np.zeros(n_p + n_e)
    me = own_off + owner.index
    team_row[me] += cw.sum()
    team_row[own_off : own_off + len(cw)] -= cw
    opp_row[me] += ow.sum()
    opp_row[opp_off : opp_off + len(ow)] -= ow
    eye = np.eye(n)
    return np.vstack([np.kron(team_row, eye), np.kron(opp_row, eye)])


def input_map(models: Models, agent: AgentId, n_pursuers: int) -> np.ndarray:
    """Matrix ``G`` with ``dX/dt = (I (x) A) X + G u_agent`` contributions for one agent."""
    n_total = n_pursuers + len(models.evaders)
    k = agent.index if agent.side == PURSUER else n_pursuers + agent.index
    col = np.zeros((n_total, 1))
    col[k] = 1.0
    return np.kron(col, models[agent].b_matrix)
