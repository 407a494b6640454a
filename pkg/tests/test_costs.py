from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from builders import models, topology, weights
from oracles import energy_quadrature, q_tilde_blocks
from mpe_games.costs import (
    AltruismParams,
    CostWeights,
    assemble_q_tilde,
    energy_gradient,
    energy_integral,
    index_evaluate,
    running_cost,
    terminal_cost,
)
from mpe_games.dynamics import AgentId, Controls, JointState, all_agents, local_errors
from mpe_games.errors import ConfigError, SaturationError

P0, E0 = AgentId("p", 0), AgentId("e", 0)


def test_q_tilde_altruism_off_is_block_diagonal():
    w = CostWeights(np.diag([1.0, 2.0]), np.diag([3.0, 4.0]), [1.0])
    np.testing.assert_array_equal(assemble_q_tilde(w, 2.0, 1.0), np.diag([1.0, 2.0, 3.0, 4.0]))


def test_q_tilde_pure_team_interest_is_singular():
    w = CostWeights(np.zeros((2, 2)), np.zeros((2, 2)), [1.0], AltruismParams(gamma=np.eye(2)))
    i = np.eye(2)
    np.testing.assert_array_equal(assemble_q_tilde(w, 0.0, 0.0), np.block([[i, -i], [-i, i]]))
    with pytest.raises(ConfigError, match="eigenvalue"):
        assemble_q_tilde(w, 0.0, 0.0, require_pd=True)


@settings(max_examples=60)
@given(st.integers(0, 10_000))
def test_q_tilde_matches_assembly_oracle(seed):
    rng = np.random.default_rng(seed)
    def sym(n):
        x = rng.normal(size=(n, n))
        return x + x.T
    lt, lc, g = sym(3), sym(3), sym(3)
    mu, eta, at, ac = rng.uniform(0, 2, 4)
    w = CostWeights(lt, lc, [1.0], AltruismParams(mu, eta, g))
    q = assemble_q_tilde(w, at, ac)
    np.testing.assert_allclose(q, q_tilde_blocks(lt, lc, g, mu, eta, at, ac), atol=1e-12)
    assert np.array_equal(q, q.T)


def test_q_tilde_rejects_bad_inputs():
    w = CostWeights(np.eye(1), np.eye(1), [1.0])
    with pytest.raises(ValueError):
        assemble_q_tilde(w, -1.0, 0.0)
    with pytest.raises(ConfigError):
        CostWeights(np.eye(1), np.eye(1), [0.0])
    with pytest.raises(ConfigError):
        AltruismParams(mu=-0.1)


def test_energy_examples():
    assert energy_integral([0.0], 1.0, 1.0) == 0.0
    assert energy_integral([0.3, -0.7], 1.0, [1.0, 2.0]) == pytest.approx(energy_integral([-0.3, 0.7], 1.0, [1.0, 2.0]))
    assert energy_integral([0.5], 1.0, 1.0) == pytest.approx(energy_quadrature(0.5, 1.0, 1.0), abs=1e-10)
    # frozen closed-form value: 2 (0.5 atanh 0.5 + 0.5 ln 0.75)
    assert energy_integral([0.5], 1.0, 1.0) == pytest.approx(0.2616240718822739, abs=1e-14)
    with pytest.raises(SaturationError):
        energy_integral([1.0], 1.0, 1.0)
    with pytest.raises(SaturationError):
        energy_gradient([-2.0], 1.0, 1.0)


def test_energy_nonnegative_zero_only_at_origin():
    rng = np.random.default_rng(0)
    u = rng.uniform(-0.999, 0.999, (100_000, 2)) * 3.0
    e = energy_integral(u, 3.0, [1.0, 0.5])
    assert np.all(e > 0)
    assert energy_integral(np.zeros((1, 2)), 3.0, [1.0, 0.5])[0] == 0.0


def test_energy_gradient_examples():
    np.testing.assert_array_equal(energy_gradient([0.0, 0.0], 2.0, 1.0), [0.0, 0.0])
    u = np.array([0.4, -1.1])
    np.testing.assert_allclose(energy_gradient(-u, 2.0, [1, 3]), -energy_gradient(u, 2.0, [1, 3]))


@settings(max_examples=100)
@given(st.floats(-0.95, 0.95), st.floats(-0.95, 0.95), st.floats(0.1, 10), st.floats(0.1, 5))
def test_energy_gradient_finite_difference(x1, x2, bound, r):
    u = np.array([x1, x2]) * bound
    g = energy_gradient(u, bound, [r, 2 * r])
    eps = 1e-6 * bound
    for k in range(2):
        du = np.zeros(2)
        du[k] = eps
        fd = (energy_integral(u + du, bound, [r, 2 * r]) - energy_integral(u - du, bound, [r, 2 * r])) / (2 * eps)
        assert abs(fd - g[k]) <= 1e-6 * max(abs(g[k]), 1e-3 * r * bound)


def _scenario(seed, sigma=0.0, rho=0.0, g=None):
    rng = np.random.default_rng(seed)
    cp = rng.uniform(0, 1, (2, 2))
    ce = rng.uniform(0, 1, (2, 2))
    np.fill_diagonal(cp, 0)
    np.fill_diagonal(ce, 0)
    top = topology(2, 2, cp, ce, rng.uniform(0, 1, (2, 2)), rng.uniform(0, 1, (2, 2)), g)
    mdl = models(2, 2, bp=0.8, be=1.2)
    ag = all_agents(2, 2)
    cq = {a: sigma * np.eye(4) for a in ag}
    gam = rng.normal(size=(2, 2))
    w = {}
    for a in ag:
        s = 1 if a.side == "p" else -1
        w[a] = CostWeights(s * np.eye(2), 2.0 * np.eye(2), rng.uniform(0.5, 2, 2),
                           AltruismParams(0.3, 0.2, 0.1 * (gam + gam.T), rho), {b: q for b, q in cq.items() if b != a})
    s = JointState(rng.normal(size=(2, 2)), rng.normal(size=(2, 2)))
    c = Controls(rng.uniform(-0.79, 0.79, (2, 2)), rng.uniform(-1.19, 1.19, (2, 2)))
    return top, mdl, w, s, c


def _oracle_running(owner, top, mdl, w, s, c, terminal=False):
    dp, de = local_errors(s, top)
    err = {AgentId("p", i): dp[i] for i in range(2)} | {AgentId("e", j): de[j] for j in range(2)}
    wo = w[owner]
    if owner.side == "p":
        cw, ow = top.gp.weights[owner.index], top.effective_pe[owner.index]
        raw_t, raw_c = top.gp.weights[owner.index].sum(), top.cross.pe_weights[owner.index].sum()
        own, opp, sign = "p", "e", 1.0
    else:
        cw, ow = top.ge.weights[owner.index], top.cross.ep_weights[owner.index]
        raw_t, raw_c = cw.sum(), ow.sum()
        own, opp, sign = "e", "p", -1.0
    alt = wo.altruism
    q = q_tilde_blocks(wo.lambda_team, wo.lambda_cross, alt.gamma, alt.mu, alt.eta, raw_t, raw_c)
    d = err[owner]
    val = d @ q @ d
    for k in range(2):
        nb = AgentId(own, k)
        if nb != owner:
            val += cw[k] * d @ wo.cross_q[nb] @ err[nb]
        val += ow[k] * d @ wo.cross_q[AgentId(opp, k)] @ err[AgentId(opp, k)]
    val *= sign
    if terminal:
        return val

    def energy(a):
        b = mdl[a].input_bound
        return sum(energy_quadrature(x, b, r) for x, r in zip(c.of(a), w[a].r_diag))

    val += energy(owner)
    for k in range(2):
        if AgentId(own, k) != owner:
            val += cw[k] * energy(AgentId(own, k))
        val -= ow[k] * energy(AgentId(opp, k))
    return val + alt.rho


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([None, [[1, 0], [1, 1]]]))
def test_running_and_terminal_cost_match_summation_oracle(seed, g):
    top, mdl, w, s, c = _scenario(seed, sigma=0.3, rho=0.2, g=g)
    errs = local_errors(s, top)
    for a in all_agents(2, 2):
        assert running_cost(a, errs, c, top, w, mdl) == pytest.approx(_oracle_running(a, top, mdl, w, s, c), abs=1e-9)
        assert terminal_cost(a, errs, top, w) == pytest.approx(_oracle_running(a, top, mdl, w, s, c, True), abs=1e-12)


def test_running_cost_trivial_cases():
    top, mdl, w, s, c = _scenario(1, sigma=0.5, rho=0.7)
    zero_s = JointState(np.zeros((2, 2)), np.zeros((2, 2)))
    zero_c = Controls(np.zeros((2, 2)), np.zeros((2, 2)))
    for a in all_agents(2, 2):
        assert running_cost(a, local_errors(zero_s, top), zero_c, top, w, mdl) == 0.7
        assert terminal_cost(a, local_errors(zero_s, top), top, w) == 0.0
    # no teammates and every game weight masked: only own terms survive
    top1 = topology(1, 2, g=[[0, 0]])
    mdl1 = models(1, 2)
    w1 = weights(top1, 2, 2)
    w1[P0] = CostWeights(np.eye(2), 2 * np.eye(2), [1.0, 1.0], AltruismParams(rho=0.25), {E0: np.eye(4)})
    s1 = JointState([[1.0, -1.0]], [[0.5, 0.5], [2.0, 0.0]])
    c1 = Controls(np.array([[0.3, 0.1]]), np.array([[0.2, 0.2], [0.4, 0.0]]))
    d = local_errors(s1, top1)[0][0]
    q = assemble_q_tilde(w1[P0], 0.0, 2.0)
    expect = d @ q @ d + energy_integral(c1.u[0], 1.0, [1.0, 1.0]) + 0.25
    assert running_cost(P0, local_errors(s1, top1), c1, top1, w1, mdl1) == pytest.approx(expect, abs=1e-12)


@settings(max_examples=25)
@given(st.integers(0, 10_000))
def test_self_interested_reduction(seed):
    rng = np.random.default_rng(seed)
    top, mdl = topology(2, 1), models(2, 1)
    w = weights(top, 2, 2)
    s = JointState(rng.normal(size=(2, 2)), rng.normal(size=(1, 2)))
    c = Controls(rng.uniform(-0.9, 0.9, (2, 2)), rng.uniform(-0.9, 0.9, (1, 2)))
    dp, _ = local_errors(s, top)
    en = lambda x: energy_integral(x, 1.0, [1.0, 1.0])
    for i in range(2):
        d = dp[i]
        expect = 0.5 * d[:2] @ d[:2] + d[2:] @ d[2:] + en(c.u[i]) + en(c.u[1 - i]) - en(c.v[0])
        got = running_cost(AgentId("p", i), (dp, local_errors(s, top)[1]), c, top, w, mdl)
        assert abs(got - expect) <= 1e-12


def test_terminal_scale_and_explicit_matrix():
    top, mdl = topology(1, 1), models(1, 1)
    s = JointState([[1.0, 2.0]], [[0.0, 0.0]])
    errs = local_errors(s, top)
    w = weights(top, 2, 2)
    w[P0] = CostWeights(np.eye(2), np.eye(2), [1.0, 1.0], terminal_scale=3.0)
    assert terminal_cost(P0, errs, top, w) == pytest.approx(15.0)
    w[P0] = CostWeights(np.eye(2), np.eye(2), [1.0, 1.0], terminal_q=np.diag([0, 0, 2.0, 0]))
    assert terminal_cost(P0, errs, top, w) == pytest.approx(2.0)


def test_running_cost_dimension_check():
    top, mdl = topology(1, 1), models(1, 1)
    w = weights(top, 2, 2)
    bad = (np.zeros((1, 6)), np.zeros((1, 6)))
    with pytest.raises(ValueError):
        running_cost(P0, bad, Controls(np.zeros((1, 2)), np.zeros((1, 2))), top, w, mdl)


def _trace(times, errs, ctrls, top):
    return SimpleNamespace(times=times, errors=errs, controls=ctrls, game_weights=[top.game_weights] * len(times))


def test_index_examples():
    top, mdl = topology(1, 1), models(1, 1)
    w = weights(top, 2, 2)
    s = JointState([[1.0, 0.0]], [[0.0, 0.0]])
    errs = local_errors(s, top)
    zc = Controls(np.zeros((1, 2)), np.zeros((1, 2)))
    with pytest.raises(ValueError):
        index_evaluate(P0, _trace([], [], [], top), w, top, mdl)
    assert index_evaluate(P0, _trace([0.0], [errs], [zc], top), w, top, mdl) == terminal_cost(P0, errs, top, w)
    # constant integrand over T = 2 with zero terminal cost
    z = local_errors(JointState([[0.0, 0.0]], [[0.0, 0.0]]), top)
    c = Controls(np.array([[0.5, 0.0]]), np.zeros((1, 2)))
    t = list(np.linspace(0, 2, 21))
    val = index_evaluate(P0, _trace(t, [z] * 21, [c] * 21, top), w, top, mdl)
    assert val == pytest.approx(2.0 * energy_integral([0.5, 0.0], 1.0, [1.0, 1.0]), abs=1e-12)


def test_index_step_halving_is_second_order():
    top, mdl = topology(1, 1), models(1, 1)
    w = weights(top, 2, 2)

    def index(h):
        t = np.arange(0, 1 + h / 2, h)
        errs = [local_errors(JointState([[np.sin(3 * x), np.cos(x)]], [[0.0, 0.0]]), top) for x in t]
        ctrl = [Controls(np.array([[0.5 * np.sin(2 * x), 0.0]]), np.zeros((1, 2))) for x in t]
        return index_evaluate(P0, _trace(list(t), errs, ctrl, top), w, top, mdl)

    i1, i2, i3 = index(0.1), index(0.05), index(0.025)
    ratio = (i1 - i2) / (i2 - i3)
    assert 3.5 < ratio < 4.5
    assert abs(i2 - i3) < 1e-3
