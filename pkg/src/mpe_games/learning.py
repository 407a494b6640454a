"""Critic/actor approximators, Bellman errors, tuning laws and offline policy iteration.

Both networks use quadratic monomials of a reduced coordinate vector ``y``.
``y`` is a subset of the stacked local errors ``z`` (owner's error first, then
neighbours' errors by agent id): coordinates that are identically zero or
linearly dependent on earlier ones are dropped, so the regression in policy
evaluation stays full rank.  Because every local error is linear in the joint
positions ``X``, ``y = T X`` for a fixed matrix ``T`` and its rate is
``T dX/dt``.  The control channel of the owner is ``C = dy_dot/du``; in the
default own-error-only basis ``C`` is just the rows of ``B_bar`` that survive.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import linalg

from .costs import q_tilde_for, running_cost
from .dynamics import (
    EVADER,
    PURSUER,
    AgentId,
    Controls,
    JointState,
    Models,
    all_agents,
    degrees,
    error_map,
    input_map,
    local_errors,
    state_rates,
)
from .errors import LearningDivergence, NonConvergence, RankDeficiencyError
from .policy import D_MAX, tanh_argument
from .topology import BiLayerTopology

log = logging.getLogger(__name__)

WEIGHTS_HEADER = "# mpe-weights v1"


def neighbours(owner: AgentId, top: BiLayerTopology) -> list[AgentId]:
    """Agents whose weight in ``owner``'s local error is nonzero (raw weights), by id."""
    if owner.side == PURSUER:
        team, opp = top.gp.weights[owner.index], top.cross.pe_weights[owner.index]
    else:
        team, opp = top.ge.weights[owner.index], top.cross.ep_weights[owner.index]
    own_side, opp_side = (PURSUER, EVADER) if owner.side == PURSUER else (EVADER, PURSUER)
    nb = [AgentId(own_side, int(k)) for k in np.flatnonzero(team)]
    nb += [AgentId(opp_side, int(j)) for j in np.flatnonzero(opp)]
    return sorted(nb, key=lambda a: (a.side != PURSUER, a.index))


def _stacked_map(members, top, n):
    return np.vstack([error_map(a, top, n) for a in members])


@dataclass(frozen=True)
class BasisSpec:
    owner: AgentId
    members: tuple[AgentId, ...]  # owner first, then neighbours
    selected: tuple[int, ...]  # indices into the stacked error vector
    n: int
    kind: str = "quadratic"

    @property
    def input_dims(self) -> list[int]:
        return [2 * self.n] * len(self.members)

    @property
    def dim(self) -> int:
        return len(self.selected)

    @property
    def feature_count(self) -> int:
        d = self.dim
        return d * (d + 1) // 2

    def reduce(self, stacked) -> np.ndarray:
        z = np.asarray(stacked, float)
        if z.shape[-1] != sum(self.input_dims):
            raise ValueError(f"stacked error has length {z.shape[-1]}, expected {sum(self.input_dims)}")
        return z[..., list(self.selected)]

    def transform(self, top: BiLayerTopology) -> np.ndarray:
        """``T`` with ``y = T X`` under the current (effective) weights."""
        return _stacked_map(self.members, top, self.n)[list(self.selected)]


def build_basis(owner: AgentId, top: BiLayerTopology, n: int, include_neighbors=False, tol=1e-9) -> BasisSpec:
    members = [owner] + (neighbours(owner, top) if include_neighbors else [])
    m = _stacked_map(members, top, n)
    keep, rank = [], 0
    for i in range(m.shape[0]):
        if not np.any(m[i]):
            continue
        r = np.linalg.matrix_rank(m[keep + [i]], tol=tol)
        if r > rank:
            keep.append(i)
            rank = r
    if not keep:
        raise RankDeficiencyError(f"{owner} has an identically zero local error")
    return BasisSpec(owner, tuple(members), tuple(keep), n)


@lru_cache(maxsize=None)
def _triu(d):
    ia, ib = np.triu_indices(d)
    ia.setflags(write=False)
    ib.setflags(write=False)
    return ia, ib


def basis_eval(spec: BasisSpec, y) -> np.ndarray:
    """Quadratic features of reduced coordinates ``y`` (also accepts a batch)."""
    y = np.asarray(y, float)
    if y.shape[-1] != spec.dim:
        raise ValueError(f"reduced input has length {y.shape[-1]}, expected {spec.dim}")
    ia, ib = _triu(spec.dim)
    return y[..., ia] * y[..., ib]


def basis_jacobian(spec: BasisSpec, y) -> np.ndarray:
    """``d phi / d y`` of shape (h, d)."""
    y = np.asarray(y, float)
    if y.shape[-1] != spec.dim:
        raise ValueError(f"reduced input has length {y.shape[-1]}, expected {spec.dim}")
    d = spec.dim
    ia, ib = _triu(d)
    jac = np.zeros((len(ia), d))
    rows = np.arange(len(ia))
    jac[rows, ia] += y[ib]
    jac[rows, ib] += y[ia]
    return jac


def basis_grad_own(spec: BasisSpec, stacked) -> np.ndarray:
    """Jacobian of the features with respect to the owner's own local error (h x 2n)."""
    y = spec.reduce(stacked)
    sel = np.zeros((spec.dim, sum(spec.input_dims)))
    sel[np.arange(spec.dim), list(spec.selected)] = 1.0
    return basis_jacobian(spec, y) @ sel[:, : 2 * spec.n]


def quadratic_weights(p: np.ndarray) -> np.ndarray:
    """Weights reproducing ``y^T P y`` in the monomial basis."""
    p = 0.5 * (p + p.T)
    ia, ib = np.triu_indices(p.shape[0])
    return np.where(ia == ib, 1.0, 2.0) * p[ia, ib]


def weights_to_matrix(w, d: int) -> np.ndarray:
    ia, ib = np.triu_indices(d)
    p = np.zeros((d, d))
    vals = np.where(ia == ib, 1.0, 0.5) * np.asarray(w, float)
    p[ia, ib] = vals
    p[ib, ia] = vals
    return p


def _finite(x, what):
    if not np.all(np.isfinite(x)):
        raise LearningDivergence(f"non-finite {what}")


@dataclass
class CriticNet:
    basis: BasisSpec
    weights: np.ndarray
    learning_rate: float = 1.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, float).copy()
        if self.weights.shape != (self.basis.feature_count,):
            raise ValueError("critic weight length does not match the basis")
        _finite(self.weights, "critic weights")
        if not self.learning_rate > 0:
            raise ValueError("critic learning rate must be positive")


@dataclass
class ActorNet:
    basis: BasisSpec
    weights: np.ndarray
    learning_rate: float = 1.0
    stabilizer: np.ndarray | float = 1e-3

    def __post_init__(self):
        self.weights = np.asarray(self.weights, float).copy()
        if self.weights.shape != (self.basis.feature_count,):
            raise ValueError("actor weight length does not match the basis")
        _finite(self.weights, "actor weights")
        if not self.learning_rate > 0:
            raise ValueError("actor learning rate must be positive")

    def y_matrix(self) -> np.ndarray:
        y = np.asarray(self.stabilizer, float)
        return y * np.eye(len(self.weights)) if y.ndim == 0 else y


def critic_estimate(net: CriticNet, y) -> float:
    return float(basis_eval(net.basis, y) @ net.weights)


def policy_argument(weights, spec, y, channel, r, bound) -> np.ndarray:
    grad_y = basis_jacobian(spec, y).T @ weights
    return tanh_argument(grad_y, channel, r, bound)


def actor_control(net: ActorNet, bound: float, channel, r, y) -> np.ndarray:
    d = policy_argument(net.weights, net.basis, y, channel, r, bound)
    return -bound * np.tanh(np.clip(d, -D_MAX, D_MAX))


def bellman_error(running: float, critic: CriticNet, sigma) -> float:
    """Approximate Hamiltonian ``r + W_c . sigma`` under the controls that produced ``sigma``."""
    return float(running + critic.weights @ sigma)


def critic_update(net: CriticNet, zeta: float, sigma, dt: float) -> np.ndarray:
    sigma = np.asarray(sigma, float)
    _finite(sigma, "critic regressor")
    _finite(zeta, "Bellman error")
    rate = -net.learning_rate * sigma * zeta / (1.0 + sigma @ sigma) ** 2
    return net.weights + dt * rate


def actor_error(actor_w, critic_w, spec, y, channel, r, bound):
    """Returns ``(zeta_a, D_hat)`` with ``zeta_a = b [tanh(D(W_a)) - tanh(D(W_c))]``."""
    da = np.clip(policy_argument(actor_w, spec, y, channel, r, bound), -D_MAX, D_MAX)
    dc = np.clip(policy_argument(critic_w, spec, y, channel, r, bound), -D_MAX, D_MAX)
    return bound * (np.tanh(da) - np.tanh(dc)), da


def actor_update(net: ActorNet, zeta_a, basis_jac, channel, d_hat, dt: float) -> np.ndarray:
    zeta_a = np.asarray(zeta_a, float)
    _finite(zeta_a, "actor error")
    _finite(d_hat, "actor argument")
    t2 = np.tanh(d_hat) ** 2
    g = basis_jac @ channel
    rate = -net.learning_rate * (g @ ((1.0 + t2) * zeta_a) + net.y_matrix() @ net.weights)
    return net.weights + dt * rate


@dataclass
class AgentApprox:
    """Everything one agent needs to evaluate and adapt its networks."""

    owner: AgentId
    critic: CriticNet
    actor: ActorNet
    transform: np.ndarray = field(default=None, repr=False)
    channel: np.ndarray = field(default=None, repr=False)

    @property
    def basis(self) -> BasisSpec:
        return self.critic.basis

    def refresh(self, top: BiLayerTopology, models: Models):
        self.transform = self.basis.transform(top)
        self.channel = self.transform @ input_map(models, self.owner, top.n_pursuers)
        return self

    def coords(self, x_flat) -> np.ndarray:
        return self.transform @ x_flat


def warm_start_matrix(owner, top, weights, models, spec: BasisSpec, init="lq") -> np.ndarray:
    """Quadratic value matrix in reduced coordinates from decoupled per-block regulators.

    Each active own block solves ``CARE(A, a B, Q_block, R)``.  Evader
    opponent blocks carry a negative weight whose regulator has no stabilizing
    solution, so the sign-flipped problem is solved and its value negated.
    """
    d = spec.dim
    if init == "zero":
        return np.zeros((d, d))
    if init != "lq":
        raise ValueError(f"unknown init {init!r}")
    n = models.n
    a = models.a_matrix
    b = models[owner].b_matrix
    r = weights[owner].r_matrix
    q = q_tilde_for(owner, top, weights[owner])
    degs = degrees(owner, top, effective=True)
    p = np.zeros((2 * n, 2 * n))
    for blk, deg in enumerate(degs):
        if deg <= 0:
            continue
        s = slice(blk * n, (blk + 1) * n)
        qb = q[s, s]
        sign = 1.0
        if owner.side == EVADER:
            # evader state cost is -q; the teammate block stays a regulator
            qb, sign = (-qb, 1.0) if blk == 0 else (qb, -1.0)
        try:
            pb = linalg.solve_continuous_are(a, deg * b, 0.5 * (qb + qb.T), r)
        except (np.linalg.LinAlgError, ValueError) as exc:
            log.warning("warm start for %s block %d failed (%s); using zero", owner, blk, exc)
            continue
        p[s, s] = sign * pb
    transform = spec.transform(top)
    own_map = error_map(owner, top, n)
    lift = own_map @ np.linalg.pinv(transform)  # delta_own = lift @ y
    return lift.T @ p @ lift


def make_approximators(top, weights, models, include_neighbors=False, init="lq", alpha=1.0, beta=1.0, y=1e-3):
    out = {}
    for a in all_agents(top.n_pursuers, top.n_evaders):
        inc = include_neighbors if isinstance(include_neighbors, bool) else a in include_neighbors
        spec = build_basis(a, top, models.n, include_neighbors=inc)
        w0 = quadratic_weights(warm_start_matrix(a, top, weights, models, spec, init))
        out[a] = AgentApprox(a, CriticNet(spec, w0, alpha), ActorNet(spec, w0, beta, y)).refresh(top, models)
    return out


def joint_controls(approx, state: JointState, top, models, weights, which="actor") -> Controls:
    """Noise-free controls of every agent from its actor (or critic) weights."""
    x = state.flat()
    u = np.zeros((top.n_pursuers, models.m))
    v = np.zeros((top.n_evaders, models.m))
    for a, ap in approx.items():
        net = ap.actor if which == "actor" else ap.critic
        d = policy_argument(net.weights, ap.basis, ap.coords(x), ap.channel, weights[a].r_diag, models[a].input_bound)
        ctrl = -models[a].input_bound * np.tanh(np.clip(d, -D_MAX, D_MAX))
        (u if a.side == PURSUER else v)[a.index] = ctrl
    return Controls(u, v)


def regressor(ap: AgentApprox, x_flat, xdot_flat) -> np.ndarray:
    """``sigma = (d phi / d y) dy/dt``."""
    return basis_jacobian(ap.basis, ap.coords(x_flat)) @ (ap.transform @ xdot_flat)


@dataclass
class PIResult:
    approx: dict
    history: list  # sup-norm value change per iteration
    bellman: list  # mean |Bellman error| after each evaluation
    iterations: int
    converged: bool


def _evaluate(approx, samples, top, weights, models):
    """Least-squares policy evaluation for every agent under the current actors."""
    rows = {a: [] for a in approx}
    targets = {a: [] for a in approx}
    for s in samples:
        ctrl = joint_controls(approx, s, top, models, weights)
        x = s.flat()
        dp, de = state_rates(s, ctrl, models)
        xdot = np.concatenate([dp.ravel(), de.ravel()])
        errs = local_errors(s, top)
        for a, ap in approx.items():
            rows[a].append(regressor(ap, x, xdot))
            targets[a].append(running_cost(a, errs, ctrl, top, weights, models))
    new, resid = {}, []
    for a, ap in approx.items():
        sig = np.array(rows[a])
        tgt = np.array(targets[a])
        h = ap.basis.feature_count
        w, _, rank, _ = np.linalg.lstsq(sig, -tgt, rcond=None)
        if rank < h:
            raise RankDeficiencyError(
                f"policy evaluation for {a} has rank {rank} < {h}; use more or wider samples"
            )
        new[a] = w
        resid.append(np.abs(sig @ w + tgt))
    return new, float(np.mean(np.concatenate(resid)))


def _values(approx, weights_by_agent, samples):
    out = []
    for a, ap in approx.items():
        ys = np.array([ap.coords(s.flat()) for s in samples])
        out.append(basis_eval(ap.basis, ys) @ weights_by_agent[a])
    return np.array(out)


def policy_iteration(approx, samples, top, weights, models, tolerance=1e-3, max_iters=50, strict=True) -> PIResult:
    """Alternate batch policy evaluation and policy improvement until values settle.

    ``history[k]`` is the sup over samples and agents of ``|V^k - V^(k-1)|``
    with ``V^0`` the initial critic.
    """
    if not samples:
        raise ValueError("policy iteration needs sample states")
    prev = _values(approx, {a: ap.critic.weights for a, ap in approx.items()}, samples)
    history, bell = [], []
    for k in range(1, max_iters + 1):
        new, mean_bell = _evaluate(approx, samples, top, weights, models)
        for w in new.values():
            _finite(w, "policy-evaluation weights")
        cur = _values(approx, new, samples)
        change = float(np.max(np.abs(cur - prev)))
        history.append(change)
        bell.append(mean_bell)
        for a, ap in approx.items():
            ap.critic.weights = new[a].copy()
            ap.actor.weights = new[a].copy()
        log.info("policy iteration %d: value change %.3e, mean |bellman| %.3e", k, change, mean_bell)
        prev = cur
        if change <= tolerance:
            return PIResult(approx, history, bell, k, True)
    if strict:
        raise NonConvergence(f"policy iteration did not settle within {max_iters} iterations", history)
    return PIResult(approx, history, bell, max_iters, False)


def write_weights(approx, stream):
    stream.write(WEIGHTS_HEADER + "\n")
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["agent", "layer", "index", "value"])
    for a in sorted(approx, key=lambda a: (a.side != PURSUER, a.index)):
        ap = approx[a]
        for layer, net in (("critic", ap.critic), ("actor", ap.actor)):
            for i, v in enumerate(net.weights):
                w.writerow([str(a), layer, i, format(float(v), ".17g")])


def read_weights(stream) -> dict:
    text = stream.read() if hasattr(stream, "read") else str(stream)
    lines = text.splitlines()
    if not lines or lines[0].strip() != WEIGHTS_HEADER:
        raise ValueError("not an mpe weights file (missing version header)")
    out: dict = {}
    for row in csv.DictReader(io.StringIO("\n".join(lines[1:]))):
        a = AgentId.parse(row["agent"])
        out.setdefault(a, {}).setdefault(row["layer"], {})[int(row["index"])] = float(row["value"])
    return {
        a: {layer: np.array([vals[i] for i in range(len(vals))]) for layer, vals in layers.items()}
        for a, layers in out.items()
    }


def load_into(approx, table):
    for a, layers in table.items():
        if a not in approx:
            raise KeyError(f"weights file names unknown agent {a}")
        ap = approx[a]
        for layer, vec in layers.items():
            net = ap.critic if layer == "critic" else ap.actor
            if vec.shape != net.weights.shape:
                raise ValueError(f"{a} {layer}: {vec.size} weights, basis needs {net.weights.size}")
            net.weights = vec.copy()
    return approx


def scaled_actor(approx, agent, factor):
    """Copy of the approximators with one agent's actor weights scaled."""
    out = {}
    for a, ap in approx.items():
        actor = replace(ap.actor, weights=ap.actor.weights * (factor if a == agent else 1.0))
        critic = replace(ap.critic, weights=ap.critic.weights.copy())
        out[a] = AgentApprox(a, critic, actor, ap.transform, ap.channel)
    return out
