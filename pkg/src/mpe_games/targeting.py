"""Rolling-horizon target selection over the game-weight layer and capture monitoring.

At every multiple of the selection interval each pursuer screens its
neighbouring evaders by a conservative reachability test, then trims the
remaining set (nearest first) until its energy margin clears ``chi``.  An
evader once excluded stays excluded.  A pursuer stops selecting as soon as
exactly one active evader is left.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .dynamics import PURSUER, AgentId, AgentModel, Controls, JointState
from .policy import capture_margin
from .topology import BiLayerTopology, set_game_weight

log = logging.getLogger(__name__)

EXCLUDE_UNREACHABLE = "exclude_unreachable"
EXCLUDE_MARGIN = "exclude_margin"
HALT_SINGLE = "halt_single_target"
EMPTY_SET = "empty_target_set"


@dataclass(frozen=True)
class ReachableBall:
    center: np.ndarray
    radius: float
    horizon: float

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("reachable radius must be nonnegative")


@dataclass
class TargetSet:
    owner: AgentId
    active_evaders: list
    interval_index: int = 0
    chi: float = 0.05

    def __post_init__(self):
        if not self.chi > 0:
            raise ValueError("chi must be positive")


@dataclass(frozen=True)
class SelectionEvent:
    time: float
    pursuer: int
    evader: int
    action: str

    def as_dict(self):
        return {"time": self.time, "kind": "targeting", "pursuer": self.pursuer, "evader": self.evader, "action": self.action}


def _selector(model_n, selector):
    return np.eye(model_n) if selector is None else np.asarray(selector, float)


def reachable_radius(model: AgentModel, horizon: float, quadrature_step: float = 0.01, selector=None) -> float:
    """``bound * sqrt(m) * int_0^T ||C e^(A tau) B||_2 dtau`` by composite trapezoid.

    ``selector`` (``C``) picks the coordinates the ball lives in; the default
    is the full state.
    """
    if horizon < 0:
        raise ValueError(f"negative horizon {horizon}")
    if horizon == 0:
        return 0.0
    if not quadrature_step > 0:
        raise ValueError("quadrature step must be positive")
    c = _selector(model.n, selector)
    k = max(1, int(np.ceil(horizon / quadrature_step - 1e-12)))
    taus = np.linspace(0.0, horizon, k + 1)
    step = expm(model.a_matrix * (horizon / k))
    cur = np.eye(model.n)
    vals = np.empty(k + 1)
    for i in range(k + 1):
        vals[i] = np.linalg.norm(c @ cur @ model.b_matrix, 2)
        cur = step @ cur
    return float(model.input_bound * np.sqrt(model.m) * np.trapezoid(vals, taus))


def reachable_ball(model, x, horizon, quadrature_step=0.01, selector=None) -> ReachableBall:
    c = _selector(model.n, selector)
    center = c @ expm(model.a_matrix * horizon) @ np.asarray(x, float)
    return ReachableBall(center, reachable_radius(model, horizon, quadrature_step, selector), horizon)


def position(x, selector=None):
    x = np.asarray(x, float)
    return x if selector is None else np.asarray(selector) @ x


def update_evader_set(owner, state, top, models, t_now, t_final, capture_radius=0.1, quadrature_step=0.01, selector=None):
    """Drop evaders that the pursuer cannot be guaranteed to intercept.

    Returns ``(topology, kept evader ids, events)``.  The nearest evader is
    never dropped so the pursuer keeps a target.
    """
    if t_now > t_final + 1e-12:
        raise ValueError("selection time is past the horizon")
    dt = max(t_final - t_now, 0.0)
    active = top.active_evaders(owner.index)
    if not active:
        return top, [], []
    xp = state.pursuers[owner.index]
    a = models.a_matrix
    prop = _selector(models.n, selector) @ expm(a * dt)
    rp = reachable_radius(models[owner], dt, quadrature_step, selector)
    dist = {j: np.linalg.norm(position(xp - state.evaders[j], selector)) for j in active}
    nearest = min(active, key=lambda j: (dist[j], j))
    kept, events = [], []
    for j in active:
        re = reachable_radius(models[AgentId("e", j)], dt, quadrature_step, selector)
        slack = rp - re - np.linalg.norm(prop @ (xp - state.evaders[j]))
        if slack >= 0 or dist[j] <= capture_radius or j == nearest:
            kept.append(j)
        else:
            top = set_game_weight(top, owner.index, j, 0)
            events.append(SelectionEvent(t_now, owner.index, j, EXCLUDE_UNREACHABLE))
    return top, kept, events


def enforce_capture_condition(target: TargetSet, controls: Controls, state, top, weights, models, selector=None):
    """Keep the longest distance-sorted prefix whose capture margin is at least ``chi``.

    Returns ``(topology, target set, events)``.
    """
    owner = target.owner
    t = float(state.time)
    if not target.active_evaders:
        log.warning("empty target set for %s", owner)
        return top, target, [SelectionEvent(t, owner.index, -1, EMPTY_SET)]
    xp = state.pursuers[owner.index]
    order = sorted(
        target.active_evaders,
        key=lambda j: (np.linalg.norm(position(xp - state.evaders[j], selector)), j),
    )
    keep = 1
    for k in range(len(order), 0, -1):
        if capture_margin(owner, controls, top, weights, models, evaders=order[:k]) >= target.chi:
            keep = k
            break
    events = []
    for j in order[keep:]:
        top = set_game_weight(top, owner.index, j, 0)
        events.append(SelectionEvent(t, owner.index, j, EXCLUDE_MARGIN))
    return top, TargetSet(owner, order[:keep], target.interval_index, target.chi), events


@dataclass
class SelectionState:
    """Per-pursuer bookkeeping across selection rounds."""

    halted: set = field(default_factory=set)
    rounds: int = 0


def rolling_horizon_step(state, top, models, weights, controls_fn, t_now, interval, t_final, chi, book: SelectionState,
                         capture_radius=0.1, quadrature_step=0.01, selector=None):
    """One selection round for all pursuers in ascending id order.

    ``controls_fn(top)`` returns the current actor controls for a topology;
    ``chi`` is a scalar or a per-pursuer sequence.
    """
    k = int(round(t_now / interval))
    if abs(k * interval - t_now) > 1e-9 * max(1.0, abs(t_now)):
        raise ValueError(f"selection time {t_now} is not a multiple of {interval}")
    chis = np.broadcast_to(np.asarray(chi, float), (top.n_pursuers,))
    events = []
    for i in range(top.n_pursuers):
        owner = AgentId(PURSUER, i)
        if i in book.halted:
            continue
        if len(top.active_evaders(i)) == 1:
            book.halted.add(i)
            events.append(SelectionEvent(t_now, i, top.active_evaders(i)[0], HALT_SINGLE))
            continue
        top, kept, ev = update_evader_set(owner, state, top, models, t_now, t_final, capture_radius, quadrature_step, selector)
        events += ev
        target = TargetSet(owner, kept, k, float(chis[i]))
        top, target, ev = enforce_capture_condition(target, controls_fn(top), state, top, weights, models, selector)
        events += ev
        if len(target.active_evaders) == 1:
            book.halted.add(i)
            events.append(SelectionEvent(t_now, i, target.active_evaders[0], HALT_SINGLE))
    book.rounds += 1
    return top, events


def pair_distances(state: JointState, selector=None) -> np.ndarray:
    p = state.pursuers if selector is None else state.pursuers @ np.asarray(selector).T
    e = state.evaders if selector is None else state.evaders @ np.asarray(selector).T
    return np.linalg.norm(p[:, None, :] - e[None, :, :], axis=-1)


def capture_monitor(state: JointState, top: BiLayerTopology, capture_radius: float, selector=None) -> np.ndarray:
    """Boolean per pursuer: some active evader is within ``capture_radius``."""
    if not capture_radius > 0:
        raise ValueError("capture radius must be positive")
    d = pair_distances(state, selector)
    mask = top.effective_pe > 0
    d = np.where(mask, d, np.inf)
    return d.min(axis=1, initial=np.inf) <= capture_radius
