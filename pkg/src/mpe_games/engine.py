"""Deterministic simulation loop, trace recording and the unilateral-deviation check.

Each step: snapshot, target selection at interval boundaries, actor controls
plus exploration noise, RK4 under zero-order hold, then one Euler update of
every critic and actor from the frozen snapshot.  Every random draw comes from
one seed split into fixed child streams (initial conditions, then one per
agent), so identical configs give bit-identical traces.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .config import ScenarioConfig, check
from .costs import agent_energies, q_tilde_for, running_cost, terminal_cost
from .dynamics import PURSUER, AgentId, Controls, JointState, all_agents, local_errors
from .errors import LearningDivergence, SimulationDivergence
from .export import TRACE_HEADER
from .learning import (
    actor_error,
    actor_update,
    basis_eval,
    basis_jacobian,
    bellman_error,
    critic_update,
    joint_controls,
    load_into,
    make_approximators,
    policy_iteration,
    read_weights,
    scaled_actor,
)
from .policy import D_MAX, capture_margin
from .targeting import SelectionState, capture_monitor, pair_distances, rolling_horizon_step

log = logging.getLogger(__name__)


@dataclass
class Setup:
    cfg: ScenarioConfig
    models: object
    top: object
    weights: dict
    selector: np.ndarray | None
    approx: dict

    @property
    def agents(self):
        return all_agents(self.top.n_pursuers, self.top.n_evaders)


def pi_samples(cfg: ScenarioConfig, models):
    p = cfg.raw["pi"]
    rng = np.random.default_rng(int(p["seed"]))
    box = float(p["box"])
    n = models.n
    return [
        JointState(rng.uniform(-box, box, (cfg.n_pursuers, n)), rng.uniform(-box, box, (cfg.n_evaders, n)))
        for _ in range(int(p["samples"]))
    ]


def prepare(cfg: ScenarioConfig, approx=None, run_pi=None) -> Setup:
    """Validate and assemble models, topology, weights and approximators."""
    check(cfg)
    models = cfg.models()
    top = cfg.topology()
    weights = cfg.cost_weights(top)
    _, _, sel = cfg.dynamics()
    if approx is None:
        ln = cfg.raw["learning"]
        approx = make_approximators(
            top, weights, models, bool(ln["include_neighbors"]), ln["init"],
            float(ln["alpha"]), float(ln["beta"]), float(ln["y"]),
        )
        if ln.get("weights_file"):
            with open(cfg.resolve(ln["weights_file"])) as fh:
                load_into(approx, read_weights(fh))
        if run_pi if run_pi is not None else cfg.mode == "offline_pi":
            p = cfg.raw["pi"]
            policy_iteration(approx, pi_samples(cfg, models), top, weights, models, float(p["tolerance"]), int(p["max_iters"]))
    return Setup(cfg, models, top, weights, sel, approx)


@dataclass
class SimulationTrace:
    agents: list
    n_pursuers: int
    n_evaders: int
    n: int
    m: int
    config_hash: str = ""
    position: str = "all"  # state coordinates used for distances
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    controls: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    values: list = field(default_factory=list)
    margins: list = field(default_factory=list)
    critic_norms: list = field(default_factory=list)
    actor_norms: list = field(default_factory=list)
    game_weights: list = field(default_factory=list)
    indices: list = field(default_factory=list)  # cumulative trapezoid of running costs
    events: list = field(default_factory=list)
    capture_times: dict = field(default_factory=dict)
    terminal: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return max(len(self.times) - 1, 0)

    @property
    def all_captured_time(self):
        for ev in self.events:
            if ev["kind"] == "all_captured":
                return ev["time"]
        return None

    def index_of(self, agent) -> float:
        """Trapezoidal index plus terminal cost of ``agent`` over the trace."""
        k = self.agents.index(agent)
        return float(self.indices[-1][k] + self.terminal[str(agent)])

    # serialization ---------------------------------------------------
    def columns(self):
        cols = ["step", "time"]
        for side, cnt in (("p", self.n_pursuers), ("e", self.n_evaders)):
            cols += [f"x_{side}{i}_{c}" for i in range(cnt) for c in range(self.n)]
        for side, cnt in (("p", self.n_pursuers), ("e", self.n_evaders)):
            cols += [f"u_{side}{i}_{c}" for i in range(cnt) for c in range(self.m)]
        cols += [f"delta_{a}_{c}" for a in self.agents for c in range(2 * self.n)]
        cols += [f"value_{a}" for a in self.agents]
        cols += [f"margin_p{i}" for i in range(self.n_pursuers)]
        cols += [f"critic_norm_{a}" for a in self.agents]
        cols += [f"actor_norm_{a}" for a in self.agents]
        cols += [f"g_p{i}_e{j}" for i in range(self.n_pursuers) for j in range(self.n_evaders)]
        cols += [f"index_{a}" for a in self.agents]
        return cols

    def rows(self):
        for k, t in enumerate(self.times):
            s, c = self.states[k], self.controls[k]
            dp, de = self.errors[k]
            yield [k, t, *s.pursuers.ravel(), *s.evaders.ravel(), *c.u.ravel(), *c.v.ravel(),
                   *dp.ravel(), *de.ravel(), *self.values[k], *self.margins[k],
                   *self.critic_norms[k], *self.actor_norms[k], *self.game_weights[k].ravel(), *self.indices[k]]

    def write_csv(self, stream):
        stream.write(TRACE_HEADER + "\n")
        stream.write(f"# config_hash={self.config_hash}\n")
        stream.write(f"# shape={self.n_pursuers}v{self.n_evaders} n={self.n} m={self.m} position={self.position}\n")
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(self.columns())
        for row in self.rows():
            w.writerow([row[0]] + [format(float(v), ".17g") for v in row[1:]])

    def write_events(self, stream):
        for ev in self.events:
            stream.write(json.dumps(ev, sort_keys=True) + "\n")

    def summary(self) -> dict:
        last = len(self.times) - 1
        return {
            "config_hash": self.config_hash,
            "steps": self.steps,
            "t_end": self.times[-1] if self.times else 0.0,
            "capture_times": {f"p{i}": self.capture_times.get(i) for i in range(self.n_pursuers)},
            "all_captured_time": self.all_captured_time,
            "final_margins": {f"p{i}": self.margins[last][i] for i in range(self.n_pursuers)} if last >= 0 else {},
            "final_critic_norms": {str(a): self.critic_norms[last][k] for k, a in enumerate(self.agents)} if last >= 0 else {},
            "final_actor_norms": {str(a): self.actor_norms[last][k] for k, a in enumerate(self.agents)} if last >= 0 else {},
            "indices": {str(a): self.index_of(a) for a in self.agents} if last >= 0 else {},
            "events": len(self.events),
        }


def _noise_amplitude(cfg, t):
    ln = cfg.raw["learning"]
    until = float(ln["exploration_until"]) * cfg.t_final
    if until <= 0:
        return 0.0
    return float(ln["exploration"]) * max(0.0, 1.0 - t / until)


class Simulator:
    """Stateful runner; :func:`run` is the usual entry point."""

    def __init__(self, setup: Setup, learn=None, explore=None, stop_on_capture=None, seed=None):
        self.s = setup
        cfg = setup.cfg
        online = cfg.mode == "online"
        self.learn = online if learn is None else learn
        self.explore = online if explore is None else explore
        sc = cfg.raw["scenario"]
        self.stop = bool(sc["stop_on_capture"]) if stop_on_capture is None else stop_on_capture
        seed = cfg.seed if seed is None else seed
        children = np.random.SeedSequence(seed).spawn(1 + len(setup.agents))
        self.init_rng = np.random.default_rng(children[0])
        self.noise_rng = {a: np.random.default_rng(children[1 + k]) for k, a in enumerate(setup.agents)}
        self.top = setup.top
        self.qt = {}
        self._refresh()

    def _refresh(self):
        s = self.s
        for ap in s.approx.values():
            ap.refresh(self.top, s.models)
        self.qt = {a: q_tilde_for(a, self.top, s.weights[a]) for a in s.agents}

    def controls(self, state):
        return joint_controls(self.s.approx, state, self.top, self.s.models, self.s.weights)

    def _limits(self):
        m = self.s.models
        return {a: m[a].input_bound * np.tanh(D_MAX) for a in self.s.agents}

    def run(self, state: JointState | None = None) -> SimulationTrace:
        s, cfg = self.s, self.s.cfg
        if state is None:
            p, e = cfg.initial_state(self.init_rng)
            state = JointState(p, e, 0.0)
        h, tf = cfg.step, cfg.t_final
        n_steps = int(round(tf / h)) if tf > 0 else 0
        tg = cfg.raw["targeting"]
        targeting = bool(tg["enabled"])
        every = max(1, int(round(float(tg["interval"]) / h)))
        rc = float(tg["capture_radius"])
        book = SelectionState()
        limits = self._limits()
        pos = "all" if s.selector is None else ",".join(str(int(i)) for i in np.argmax(s.selector, axis=1))
        trace = SimulationTrace(list(s.agents), s.top.n_pursuers, s.top.n_evaders, s.models.n, s.models.m, cfg.config_hash(), pos)
        captured = np.zeros(s.top.n_pursuers, bool)
        self._check_capture(state, trace, captured, rc)
        done = self.stop and captured.all()
        cum = np.zeros(len(s.agents))
        prev_cost = None
        k = 0
        try:
            while True:
                t = k * h
                state = JointState(state.pursuers, state.evaders, t)
                if not done and k < n_steps and targeting and k % every == 0:
                    self._sel_state = state
                    self.top, evs = rolling_horizon_step(
                        state, self.top, s.models, s.weights, self._controls_for, t, float(tg["interval"]), tf,
                        tg["chi"], book, rc, float(tg["quadrature_step"]), s.selector,
                    )
                    trace.events += [e.as_dict() for e in evs]
                    self._refresh()
                last = done or k >= n_steps
                ctrl = self.controls(state)
                if not last and self.explore:
                    ctrl = self._perturb(ctrl, t, limits)
                errs = local_errors(state, self.top)
                en = agent_energies(ctrl, s.models, s.weights)
                costs = np.array([running_cost(a, errs, ctrl, self.top, s.weights, s.models, self.qt[a], en) for a in s.agents])
                if prev_cost is not None:
                    cum = cum + 0.5 * h * (prev_cost + costs)
                prev_cost = costs
                self._record(trace, state, ctrl, errs, cum, en)
                if last:
                    break
                if self.learn:
                    self._learn(state, ctrl, costs, h)
                state = self._integrate(state, ctrl, h)
                k += 1
                self._check_capture(JointState(state.pursuers, state.evaders, k * h), trace, captured, rc)
                done = self.stop and captured.all()
        except (SimulationDivergence, LearningDivergence) as exc:
            trace.events.append({"kind": "divergence", "time": k * h, "message": str(exc)})
            exc.trace = trace
            raise
        errs = trace.errors[-1]
        trace.terminal = {str(a): terminal_cost(a, errs, self.top, s.weights, self.qt[a]) for a in s.agents}
        return trace

    def _controls_for(self, top):
        saved = self.top
        self.top = top
        self._refresh()
        ctrl = self.controls(self._sel_state)
        self.top = saved
        return ctrl

    def _perturb(self, ctrl, t, limits):
        amp = _noise_amplitude(self.s.cfg, t)
        u, v = ctrl.u.copy(), ctrl.v.copy()
        for a in self.s.agents:
            b = self.s.models[a].input_bound
            noise = self.noise_rng[a].uniform(-1.0, 1.0, self.s.models.m) * amp * b
            arr = u if a.side == PURSUER else v
            arr[a.index] = np.clip(arr[a.index] + noise, -limits[a], limits[a])
        return Controls(u, v)

    def _record(self, trace, state, ctrl, errs, cum, energies=None):
        s = self.s
        x = state.flat()
        vals, cn, an = [], [], []
        for a in s.agents:
            ap = s.approx[a]
            vals.append(float(basis_eval(ap.basis, ap.coords(x)) @ ap.critic.weights))
            cn.append(float(np.linalg.norm(ap.critic.weights)))
            an.append(float(np.linalg.norm(ap.actor.weights)))
        margins = [capture_margin(AgentId(PURSUER, i), ctrl, self.top, s.weights, s.models, energies=energies) for i in range(self.top.n_pursuers)]
        trace.times.append(state.time)
        trace.states.append(state)
        trace.controls.append(ctrl)
        trace.errors.append(errs)
        trace.values.append(vals)
        trace.margins.append(margins)
        trace.critic_norms.append(cn)
        trace.actor_norms.append(an)
        trace.game_weights.append(np.array(self.top.game_weights))
        trace.indices.append(cum.copy())

    def _learn(self, state, ctrl, costs, h):
        s = self.s
        x = state.flat()
        xdot = self._rates_flat(state.pursuers, state.evaders, ctrl)
        new = {}
        for k, a in enumerate(s.agents):
            ap = s.approx[a]
            y = ap.coords(x)
            jac = basis_jacobian(ap.basis, y)
            sigma = jac @ (ap.transform @ xdot)
            zeta = bellman_error(costs[k], ap.critic, sigma)
            wc = critic_update(ap.critic, zeta, sigma, h)
            mdl = s.models[a]
            za, dhat = actor_error(ap.actor.weights, ap.critic.weights, ap.basis, y, ap.channel, s.weights[a].r_diag, mdl.input_bound)
            wa = actor_update(ap.actor, za, jac, ap.channel, dhat, h)
            if not (np.all(np.isfinite(wc)) and np.all(np.isfinite(wa))):
                raise LearningDivergence(f"non-finite weights for {a} at t={state.time}")
            new[a] = (wc, wa)
        for a, (wc, wa) in new.items():
            s.approx[a].critic.weights = wc
            s.approx[a].actor.weights = wa

    def _inputs(self, ctrl):
        m = self.s.models
        bu = np.array([mdl.b_matrix @ ctrl.u[i] for i, mdl in enumerate(m.pursuers)])
        bv = np.array([mdl.b_matrix @ ctrl.v[j] for j, mdl in enumerate(m.evaders)])
        return bu, bv

    def _rates_flat(self, p, e, ctrl):
        a = self.s.models.a_matrix
        bu, bv = self._inputs(ctrl)
        return np.concatenate([(p @ a.T + bu).ravel(), (e @ a.T + bv).ravel()])

    def _integrate(self, state, ctrl, h):
        a = self.s.models.a_matrix
        bu, bv = self._inputs(ctrl)
        f = lambda p, e: (p @ a.T + bu, e @ a.T + bv)
        p0, e0 = state.pursuers, state.evaders
        k1 = f(p0, e0)
        k2 = f(p0 + 0.5 * h * k1[0], e0 + 0.5 * h * k1[1])
        k3 = f(p0 + 0.5 * h * k2[0], e0 + 0.5 * h * k2[1])
        k4 = f(p0 + h * k3[0], e0 + h * k3[1])
        p = p0 + h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        e = e0 + h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(e))):
            raise SimulationDivergence(f"non-finite joint state at t={state.time + h}")
        return JointState(p, e, state.time + h)

    def _check_capture(self, state, trace, captured, rc):
        now = capture_monitor(state, self.top, rc, self.s.selector)
        for i in np.flatnonzero(now & ~captured):
            captured[i] = True
            trace.capture_times[int(i)] = float(state.time)
            trace.events.append({"kind": "capture", "time": float(state.time), "pursuer": int(i)})
            if captured.all():
                trace.events.append({"kind": "all_captured", "time": float(state.time)})


def run(cfg: ScenarioConfig, setup: Setup | None = None, **kwargs) -> SimulationTrace:
    setup = setup or prepare(cfg)
    return Simulator(setup, **kwargs).run()


def step(sim: Simulator, state: JointState, h: float):
    """Advance one step without targeting: returns ``(next state, applied controls)``."""
    ctrl = sim.controls(state)
    if sim.explore:
        ctrl = sim._perturb(ctrl, state.time, sim._limits())
    if sim.learn:
        errs = local_errors(state, sim.top)
        costs = np.array([running_cost(a, errs, ctrl, sim.top, sim.s.weights, sim.s.models, sim.qt[a]) for a in sim.s.agents])
        sim._learn(state, ctrl, costs, h)
    return sim._integrate(state, ctrl, h), ctrl


def nash_perturbation_check(cfg: ScenarioConfig, approx, agent: AgentId, factors, rollouts: int):
    """Mean/std of ``agent``'s own index when only its actor weights are scaled.

    Rollout ``r`` uses seed ``cfg.seed + r`` for the initial conditions, so
    every factor sees the same set of initial states.
    """
    factors = list(factors)
    if not factors:
        raise ValueError("empty factor list")
    if rollouts < 1:
        raise ValueError("need at least one rollout")
    table = []
    base = prepare(cfg, approx=approx)
    for s in factors:
        pert = scaled_actor(approx, agent, s)
        setup = Setup(cfg, base.models, base.top, base.weights, base.selector, pert)
        vals = []
        for r in range(rollouts):
            sim = Simulator(setup, learn=False, explore=False, stop_on_capture=False, seed=cfg.seed + r)
            vals.append(sim.run().index_of(agent))
        vals = np.array(vals)
        sd = float(vals.std(ddof=1)) if rollouts > 1 else 0.0
        table.append({"agent": str(agent), "factor": float(s), "mean": float(vals.mean()), "std": sd,
                      "se": sd / np.sqrt(rollouts), "rollouts": rollouts})
    return table


def trace_distances(trace: SimulationTrace, selector=None) -> np.ndarray:
    return np.array([pair_distances(s, selector) for s in trace.states])
