"""Scenario configuration: TOML schema, dotted overrides, validation and model assembly.

See README.md for the full schema.  Matrices may be given as a scalar
(times identity), a flat list (diagonal) or nested lists (row-major).
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .costs import AltruismParams, CostWeights, q_tilde_for
from .dynamics import EVADER, PURSUER, AgentId, AgentModel, Models, all_agents, controllability_rank
from .errors import ConfigError
from .topology import BiLayerTopology, CommGraph, CrossGraph

log = logging.getLogger(__name__)

MODES = ("online", "offline_pi", "fixed_policy")

DEFAULTS = {
    "scenario": {"name": "scenario", "t_final": 10.0, "step": 0.01, "seed": 0, "mode": "online", "stop_on_capture": True},
    "dynamics": {"preset": "single_integrator", "dim": 2},
    "topology": {"pursuers": "complete", "evaders": "complete", "pe": "full", "ep": "full", "weight": 1.0},
    "learning": {
        "alpha": 1.0,
        "beta": 1.0,
        "y": 1e-3,
        "exploration": 0.05,
        "exploration_until": 0.5,
        "include_neighbors": False,
        "init": "lq",
        "weights_file": "",
    },
    "pi": {"samples": 200, "box": 1.0, "tolerance": 1e-3, "max_iters": 50, "seed": 1},
    "targeting": {"enabled": False, "interval": 1.0, "chi": 0.05, "capture_radius": 0.1, "quadrature_step": 0.01},
    "nash": {"factors": [0.5, 0.8, 1.2, 1.5], "rollouts": 30},
    "capture_study": {"paired": ""},
}

TEAM_DEFAULTS = {
    "count": 1,
    "bound": 1.0,
    "r": 1.0,
    "lambda_team": 0.0,
    "lambda_cross": 1.0,
    "gamma": 0.0,
    "mu": 0.0,
    "eta": 0.0,
    "rho": 0.0,
    "cross_sigma": 0.0,
    "terminal_scale": 1.0,
}


def _merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def parse_value(text: str):
    """Interpret an override value as TOML, falling back to a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(raw: dict, overrides) -> dict:
    out = copy.deepcopy(raw)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, val = item.split("=", 1)
        parts = key.strip().split(".")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-table")
        node[parts[-1]] = parse_value(val.strip())
    return out


def matrix(value, n, what="matrix") -> np.ndarray:
    a = np.asarray(value, float)
    if a.ndim == 0:
        return float(a) * np.eye(n)
    if a.ndim == 1:
        if a.size != n:
            raise ConfigError(f"{what}: diagonal has {a.size} entries, expected {n}")
        return np.diag(a)
    if a.shape != (n, n):
        raise ConfigError(f"{what}: shape {a.shape}, expected {(n, n)}")
    return a


def _per_agent(value, count, what):
    a = np.asarray(value, float)
    if a.ndim == 0:
        return [float(a)] * count
    if a.shape != (count,):
        raise ConfigError(f"{what}: expected a scalar or {count} values")
    return [float(x) for x in a]


@dataclass
class ScenarioConfig:
    raw: dict
    base_dir: Path = field(default_factory=Path.cwd)

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def t_final(self) -> float:
        return float(self.raw["scenario"]["t_final"])

    @property
    def step(self) -> float:
        return float(self.raw["scenario"]["step"])

    @property
    def seed(self) -> int:
        return int(self.raw["scenario"]["seed"])

    @property
    def mode(self) -> str:
        return self.raw["scenario"]["mode"]

    @property
    def n_pursuers(self) -> int:
        return int(self.raw["pursuers"]["count"])

    @property
    def n_evaders(self) -> int:
        return int(self.raw["evaders"]["count"])

    def with_overrides(self, overrides) -> "ScenarioConfig":
        return ScenarioConfig(apply_overrides(self.raw, overrides), self.base_dir)

    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.base_dir / p

    # assembled objects -------------------------------------------------
    def dynamics(self):
        """Returns ``(A, B, position selector or None)``."""
        d = self.raw["dynamics"]
        preset = d.get("preset", "")
        if preset == "single_integrator":
            k = int(d.get("dim", 2))
            return np.zeros((k, k)), np.eye(k), None
        if preset == "double_integrator":
            k = int(d.get("dim", 2))
            z, i = np.zeros((k, k)), np.eye(k)
            a = np.block([[z, i], [z, z]])
            b = np.vstack([z, i])
            return a, b, np.hstack([i, z])
        if preset not in ("", "custom"):
            raise ConfigError(f"unknown dynamics preset {preset!r}")
        if "a" not in d or "b" not in d:
            raise ConfigError("custom dynamics need both 'a' and 'b'")
        a = np.atleast_2d(np.asarray(d["a"], float))
        b = np.asarray(d["b"], float)
        b = b.reshape(-1, 1) if b.ndim == 1 else b
        sel = None
        if d.get("position_indices"):
            idx = list(d["position_indices"])
            sel = np.eye(a.shape[0])[idx]
        return a, b, sel

    def models(self) -> Models:
        a, b, _ = self.dynamics()
        mk = lambda side, team, cnt: tuple(
            AgentModel(a, b, bd, side) for bd in _per_agent(self.raw[team]["bound"], cnt, f"{team}.bound")
        )
        return Models(mk(PURSUER, "pursuers", self.n_pursuers), mk(EVADER, "evaders", self.n_evaders))

    def topology(self) -> BiLayerTopology:
        t = self.raw["topology"]
        w = float(t.get("weight", 1.0))
        n, m = self.n_pursuers, self.n_evaders

        def graph(spec, k):
            if isinstance(spec, str):
                return CommGraph.preset(spec, k, w)
            return CommGraph(np.asarray(spec, float).reshape(k, k))

        def cross(spec, shape):
            if isinstance(spec, str):
                if spec != "full":
                    raise ConfigError(f"unknown cross preset {spec!r}; expected 'full' or a matrix")
                return w * np.ones(shape)
            return np.asarray(spec, float).reshape(shape)

        gw = t.get("game_weights")
        return BiLayerTopology(
            graph(t["pursuers"], n),
            graph(t["evaders"], m),
            CrossGraph(cross(t["pe"], (n, m)), cross(t["ep"], (m, n))),
            None if gw is None else np.asarray(gw, float).reshape(n, m),
        )

    def cost_weights(self, top: BiLayerTopology | None = None) -> dict:
        top = top or self.topology()
        a, b, _ = self.dynamics()
        n, mdim = a.shape[0], b.shape[1]
        out = {}
        for agent in all_agents(self.n_pursuers, self.n_evaders):
            team = self.raw["pursuers" if agent.side == PURSUER else "evaders"]
            sig = float(team["cross_sigma"])
            cross_q = {}
            if sig:
                for nb in all_agents(self.n_pursuers, self.n_evaders):
                    if nb != agent:
                        cross_q[nb] = sig * np.eye(2 * n)
            r = np.asarray(team["r"], float)
            r = np.full(mdim, float(r)) if r.ndim == 0 else r
            out[agent] = CostWeights(
                matrix(team["lambda_team"], n, "lambda_team"),
                matrix(team["lambda_cross"], n, "lambda_cross"),
                r,
                AltruismParams(
                    float(team["mu"]), float(team["eta"]), matrix(team["gamma"], n, "gamma"), float(team["rho"])
                ),
                cross_q,
                float(team["terminal_scale"]),
            )
        return out

    def initial_state(self, rng: np.random.Generator):
        """Explicit initial states, else uniform draws from the configured boxes."""
        a, _, _ = self.dynamics()
        n = a.shape[0]
        parts = []
        for team, cnt in (("pursuers", self.n_pursuers), ("evaders", self.n_evaders)):
            sec = self.raw[team]
            if "initial" in sec:
                x = np.asarray(sec["initial"], float).reshape(cnt, n)
            else:
                if "initial_boxes" in sec:
                    boxes = np.asarray(sec["initial_boxes"], float).reshape(cnt, n, 2)
                elif "initial_box" in sec:
                    boxes = np.broadcast_to(np.asarray(sec["initial_box"], float).reshape(n, 2), (cnt, n, 2))
                else:
                    raise ConfigError(f"{team} need 'initial', 'initial_box' or 'initial_boxes'")
                x = rng.uniform(boxes[..., 0], boxes[..., 1])
            parts.append(x)
        return parts

    def has_random_initial(self) -> bool:
        return any("initial" not in self.raw[t] for t in ("pursuers", "evaders"))


def load_config(path, overrides=None, seed=None) -> ScenarioConfig:
    path = Path(path)
    text = path.read_text()
    try:
        user = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(user, overrides, seed, base_dir=path.parent)


def from_dict(user: dict, overrides=None, seed=None, base_dir=None) -> ScenarioConfig:
    raw = _merge(DEFAULTS, user)
    for team in ("pursuers", "evaders"):
        raw[team] = _merge(TEAM_DEFAULTS, user.get(team, {}))
    raw = apply_overrides(raw, overrides)
    if seed is not None:
        raw["scenario"]["seed"] = int(seed)
    return ScenarioConfig(raw, Path(base_dir) if base_dir else Path.cwd())


def _multiple(a, b, tol=1e-9):
    k = round(a / b)
    return abs(k * b - a) <= tol * max(1.0, abs(a))


def validate(cfg: ScenarioConfig) -> list[str]:
    """All invariant violations as human-readable strings (empty when valid)."""
    problems = []
    sc = cfg.raw["scenario"]
    try:
        h, tf = float(sc["step"]), float(sc["t_final"])
        if not h > 0:
            problems.append(f"scenario.step must be positive, got {h}")
        if tf < 0:
            problems.append(f"scenario.t_final must be nonnegative, got {tf}")
        if h > 0 and tf > 0 and not _multiple(tf, h):
            problems.append(f"scenario.t_final = {tf} is not a multiple of step {h}")
        if sc["mode"] not in MODES:
            problems.append(f"scenario.mode {sc['mode']!r} not in {MODES}")
        tg = cfg.raw["targeting"]
        if tg["enabled"]:
            big_t = float(tg["interval"])
            if not big_t >= h:
                problems.append(f"targeting.interval {big_t} must be >= step {h}")
            elif not _multiple(big_t, h):
                problems.append(f"targeting.interval {big_t} is not a multiple of step {h}")
            chi = np.asarray(tg["chi"], float)
            if np.any(chi <= 0):
                problems.append("targeting.chi must be positive")
        if not float(tg["capture_radius"]) > 0:
            problems.append("targeting.capture_radius must be positive")
        ln = cfg.raw["learning"]
        for k in ("alpha", "beta"):
            if not float(ln[k]) > 0:
                problems.append(f"learning.{k} must be positive")
        if float(ln["y"]) < 0:
            problems.append("learning.y must be nonnegative")
        if ln["init"] not in ("lq", "zero"):
            problems.append(f"learning.init {ln['init']!r} not in ('lq', 'zero')")
        for team in ("pursuers", "evaders"):
            if int(cfg.raw[team]["count"]) < 1:
                problems.append(f"{team}.count must be >= 1")
    except (KeyError, TypeError, ValueError) as exc:
        problems.append(f"malformed scenario section: {exc}")
        return problems
    if problems:
        return problems
    try:
        a, b, _ = cfg.dynamics()
        if a.shape[0] != a.shape[1] or b.shape[0] != a.shape[0]:
            return problems + [f"dynamics: incompatible A {a.shape} and B {b.shape}"]
        if controllability_rank(a, b) < a.shape[0]:
            return problems + ["dynamics: (A, B) is not controllable"]
        cfg.models()
        top = cfg.topology()
        weights = cfg.cost_weights(top)
    except (ConfigError, ValueError, TypeError) as exc:
        return problems + [str(exc)]
    for agent, w in weights.items():
        try:
            q_tilde_for(agent, top, w, require_pd=agent.side == PURSUER)
        except ConfigError as exc:
            problems.append(f"{agent}: {exc}")
        if agent.side == EVADER:
            q = q_tilde_for(agent, top, w)
            log.debug("%s assembled weight spectrum %s", agent, np.linalg.eigvalsh(q))
    try:
        cfg.initial_state(np.random.default_rng(0))
    except (ConfigError, ValueError) as exc:
        problems.append(f"initial conditions: {exc}")
    wf = cfg.raw["learning"].get("weights_file")
    if wf and not cfg.resolve(wf).exists():
        problems.append(f"learning.weights_file {wf} does not exist")
    return problems


def check(cfg: ScenarioConfig):
    problems = validate(cfg)
    if problems:
        raise ConfigError("; ".join(problems))
    return cfg
