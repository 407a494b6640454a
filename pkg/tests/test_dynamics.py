import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from builders import models, topology
from oracles import local_error_sum
from mpe_games.dynamics import (
    AgentId,
    AgentModel,
    Controls,
    JointState,
    adversary_center,
    error_map,
    error_rhs,
    local_error,
    local_errors,
    team_center,
)
from mpe_games.errors import ConfigError, SaturationError

P0, E0 = AgentId("p", 0), AgentId("e", 0)
A_DAMPED = np.array([[0.0, 1.0], [-2.0, -0.3]])


def test_single_edge_error():
    top = topology(1, 1)
    d = local_error(P0, JointState([[1.0, 0.0]], [[0.0, 0.0]]), top)
    np.testing.assert_array_equal(d.vector, [0, 0, 1, 0])


def test_coincident_agents_zero_error():
    top = topology(3, 2)
    s = JointState(np.ones((3, 2)), np.ones((2, 2)))
    dp, de = local_errors(s, top)
    assert not dp.any() and not de.any()


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        local_error(P0, JointState(np.zeros((2, 2)), np.zeros((2, 2))), topology(3, 2))


@settings(max_examples=60)
@given(
    arrays(float, (2, 3), elements=st.floats(-5, 5)),
    arrays(float, (2, 3), elements=st.floats(-5, 5)),
    arrays(float, (4, 2), elements=st.floats(0, 2)),
    arrays(int, (2, 2), elements=st.integers(0, 1)),
)
def test_2v2_matches_direct_sum(p, e, w, g):
    cp = np.array([[0, w[0, 0]], [w[0, 1], 0]])
    ce = np.array([[0, w[1, 0]], [w[1, 1], 0]])
    pe, ep = w[2:].reshape(2, 2), w[:2].T.copy()
    top = topology(2, 2, cp, ce, pe, ep, g)
    s = JointState(p, e)
    dp, de = local_errors(s, top)
    for i in range(2):
        ref = local_error_sum(p, e, cp, pe * g, i)
        np.testing.assert_allclose(local_error(AgentId("p", i), s, top).vector, ref, atol=1e-12)
        np.testing.assert_allclose(dp[i], ref, atol=1e-12)
        # evader opponent weights are never masked
        ref_e = local_error_sum(e, p, ce, ep, i)
        np.testing.assert_allclose(de[i], ref_e, atol=1e-12)
        x = s.flat()
        np.testing.assert_allclose(error_map(AgentId("p", i), top, 3) @ x, ref, atol=1e-12)
        np.testing.assert_allclose(error_map(AgentId("e", i), top, 3) @ x, ref_e, atol=1e-12)


def test_rhs_zero_controls_zero_drift():
    top, mdl = topology(2, 1), models(2, 1)
    s = JointState(np.random.default_rng(0).normal(size=(2, 2)), [[1.0, 1.0]])
    c = Controls(np.zeros((2, 2)), np.zeros((1, 2)))
    np.testing.assert_array_equal(error_rhs(P0, s, c, top, mdl), np.zeros(4))


def test_rhs_1v1_substitution():
    top, mdl = topology(1, 1), models(1, 1, n=1)
    s = JointState([[0.3]], [[-0.2]])
    c = Controls(np.array([[0.4]]), np.array([[-0.1]]))
    np.testing.assert_allclose(error_rhs(P0, s, c, top, mdl)[1], 0.4 - (-0.1))
    np.testing.assert_allclose(error_rhs(E0, s, c, top, mdl)[1], -0.1 - 0.4)


def test_rhs_saturation_contract():
    top, mdl = topology(1, 1), models(1, 1, bp=0.5)
    s = JointState([[0.0, 0.0]], [[1.0, 0.0]])
    with pytest.raises(SaturationError):
        error_rhs(P0, s, Controls(np.array([[0.6, 0.0]]), np.zeros((1, 2))), top, mdl)


@settings(max_examples=40)
@given(st.integers(0, 10_000))
def test_rhs_superposition(seed):
    rng = np.random.default_rng(seed)
    top, mdl = topology(2, 2), models(2, 2, a=A_DAMPED, b=[[0.0], [1.0]], bp=10, be=10)
    s = JointState(rng.normal(size=(2, 2)), rng.normal(size=(2, 2)))
    zero = Controls(np.zeros((2, 1)), np.zeros((2, 1)))
    c1 = Controls(rng.uniform(-1, 1, (2, 1)), rng.uniform(-1, 1, (2, 1)))
    c2 = Controls(rng.uniform(-1, 1, (2, 1)), rng.uniform(-1, 1, (2, 1)))
    csum = Controls(c1.u + c2.u, c1.v + c2.v)
    for a in (P0, AgentId("p", 1), E0):
        f0 = error_rhs(a, s, zero, top, mdl)
        lhs = error_rhs(a, s, csum, top, mdl) - f0
        rhs = (error_rhs(a, s, c1, top, mdl) - f0) + (error_rhs(a, s, c2, top, mdl) - f0)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def _rk4_error(h):
    """Integrate error_rhs by RK4 over [0, 1] and compare with delta of the exact positions."""
    from scipy.linalg import expm

    top, mdl = topology(2, 1), models(2, 1, a=A_DAMPED, b=[[0.0], [1.0]], bp=5, be=5)
    rng = np.random.default_rng(3)
    s0 = JointState(rng.normal(size=(2, 2)), rng.normal(size=(1, 2)))
    c = Controls(np.array([[0.5], [-0.2]]), np.array([[0.3]]))
    n = 2
    # delta dynamics are closed: d' = blockdiag(A, A) d + const
    const = error_rhs(P0, s0, c, top, mdl) - np.kron(np.eye(2), A_DAMPED) @ local_error(P0, s0, top).vector
    f = lambda d: np.kron(np.eye(2), A_DAMPED) @ d + const
    d = local_error(P0, s0, top).vector
    for _ in range(int(round(1 / h))):
        k1 = f(d)
        k2 = f(d + 0.5 * h * k1)
        k3 = f(d + 0.5 * h * k2)
        k4 = f(d + h * k3)
        d = d + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    # exact positions under the held controls
    big = np.zeros((n + 1, n + 1))
    big[:n, :n] = A_DAMPED
    out_p, out_e = [], []
    for x, u, side in [(s0.pursuers[0], c.u[0], 0), (s0.pursuers[1], c.u[1], 0), (s0.evaders[0], c.v[0], 1)]:
        big[:n, n] = mdl.pursuers[0].b_matrix @ u
        z = expm(big) @ np.concatenate([x, [1.0]])
        (out_p if side == 0 else out_e).append(z[:n])
    exact = local_error(P0, JointState(out_p, out_e), top).vector
    return np.max(np.abs(d - exact))


def test_rk4_consistency_fourth_order():
    e1, e2 = _rk4_error(0.1), _rk4_error(0.05)
    assert e2 < e1
    assert 12 < e1 / e2 < 20  # 2^4 = 16


def test_centers_examples():
    top = topology(1, 1)
    s = JointState([[1.0, 2.0]], [[3.0, 2.0]])
    np.testing.assert_array_equal(team_center(P0, s, top), [1.0, 2.0])
    np.testing.assert_array_equal(adversary_center(P0, s, top), [2.0, 2.0])
    top2 = topology(2, 1)
    s2 = JointState([[0.0, 0.0], [2.0, 4.0]], [[9.0, 9.0]])
    np.testing.assert_array_equal(team_center(P0, s2, top2), [1.0, 2.0])


@settings(max_examples=40)
@given(st.integers(0, 10_000))
def test_center_identity(seed):
    rng = np.random.default_rng(seed)
    cp = rng.uniform(0, 2, (3, 3))
    np.fill_diagonal(cp, 0)
    top = topology(3, 2, cp=cp, pe=rng.uniform(0, 2, (3, 2)), ep=rng.uniform(0, 2, (2, 3)))
    s = JointState(rng.normal(size=(3, 2)), rng.normal(size=(2, 2)))
    for i in range(3):
        a = AgentId("p", i)
        d = local_error(a, s, top)
        a_t, a_c = cp[i].sum(), top.cross.pe_weights[i].sum()
        lhs = team_center(a, s, top) - adversary_center(a, s, top)
        rhs = d.opponent_block / (1 + a_c) - d.teammate_block / (1 + a_t)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_model_contract():
    with pytest.raises(ConfigError):
        AgentModel(np.zeros((2, 2)), [[1.0], [0.0]], 1.0)
    with pytest.raises(ConfigError):
        AgentModel(np.zeros((1, 1)), [[1.0]], 0.0)
    with pytest.raises(ValueError):
        JointState([[np.nan, 0.0]], [[0.0, 0.0]])
    assert AgentId.parse("e12") == AgentId("e", 12)
    with pytest.raises(ValueError):
        AgentId.parse("q1")
