import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from trapsac.approx import policy_head
from trapsac.heuristic import rule_distribution
from trapsac.sac import (
    Batch, DiscreteSac, SacConfig, SacConfigError, actor_objective, entropy, kl_divergence,
    margin_terms, soft_state_value, td_targets,
)

from oracles import (
    chain_value_iteration, gradient_errors, random_batch, small_agent,
)


def simplex(n=9):
    return st.lists(st.floats(0.01, 1.0), min_size=n, max_size=n).map(
        lambda v: np.array(v) / sum(v))


def test_config_defaults_and_validation():
    c = SacConfig()
    assert (c.gamma, c.lr_actor, c.lr_critic, c.batch, c.buffer_cap) == (0.8, 5e-4, 1e-3, 64, 50_000)
    assert (c.target_entropy, c.alpha_init, c.alpha_lr, c.tau) == (-1.0, 0.01, 1e-3, 0.005)
    assert c.w_kl_init == pytest.approx(2.0)
    for bad in ({"gamma": 1.0}, {"gamma": 0.0}, {"alpha_init": 0.0}, {"tau": 1.5},
                {"batch": 100, "buffer_cap": 50}, {"kl_ratio": -1.0}):
        with pytest.raises(SacConfigError):
            SacConfig(**bad)


def test_soft_value_examples():
    q = np.arange(9.0)
    det = np.eye(9)[3]
    assert soft_state_value(q, q + 1, det, np.where(det > 0, 0.0, -700.0), 0.0) == 3.0
    uni = np.full(9, 1 / 9)
    assert soft_state_value(np.zeros(9), np.zeros(9), uni, np.log(uni), 0.3) == \
        pytest.approx(0.3 * math.log(9), abs=1e-12)


@given(st.lists(st.floats(-10, 10), min_size=9, max_size=9),
       st.lists(st.floats(-10, 10), min_size=9, max_size=9), simplex(), st.floats(0, 1))
def test_soft_value_matches_summation(q1, q2, p, alpha):
    expect = sum(p[a] * (min(q1[a], q2[a]) - alpha * math.log(p[a])) for a in range(9))
    got = soft_state_value(np.array(q1), np.array(q2), p, np.log(p), alpha)
    assert got == pytest.approx(expect, abs=1e-9)


def test_td_targets():
    r = np.array([1.0, -2.0])
    np.testing.assert_array_equal(td_targets(r, np.array([1.0, 1.0]), np.array([5.0, 7.0]), 0.8), r)
    # hand trace: 1 + 0.8*5 and -2 + 0
    np.testing.assert_allclose(td_targets(r, np.array([0.0, 1.0]), np.array([5.0, 7.0]), 0.8),
                               [5.0, -2.0])


def test_critic_target_hand_trace():
    agent = small_agent(0)
    rng = np.random.default_rng(0)
    b = random_batch(rng, n=2)
    b.done[:] = [0.0, 1.0]
    probs, logp = policy_head(agent.actor(b.s2))
    q1, q2 = agent.q1_target(b.s2), agent.q2_target(b.s2)
    v0 = sum(probs[0, a] * (min(q1[0, a], q2[0, a]) - agent.alpha * logp[0, a]) for a in range(9))
    out, _ = agent.critic_loss(b)
    assert out["target_mean"] == pytest.approx(((b.r[0] + 0.8 * v0) + b.r[1]) / 2, abs=1e-9)


def test_kl_examples():
    prior = rule_distribution(2)
    assert kl_divergence(prior, np.log(prior), prior) == pytest.approx(0.0, abs=1e-15)
    uni = np.full(9, 1 / 9)
    expect = sum((1 / 9) * math.log((1 / 9) / m) for m in prior)
    assert kl_divergence(uni, np.log(uni), prior) == pytest.approx(expect, abs=1e-12)


@given(simplex(), simplex())
def test_kl_nonnegative(p, q):
    kl = kl_divergence(p, np.log(p), q)
    assert kl >= -1e-12
    assert kl_divergence(p, np.log(p), p) == pytest.approx(0.0, abs=1e-12)


def test_actor_objective_reduces_without_kl():
    rng = np.random.default_rng(0)
    p, _ = policy_head(rng.normal(size=(4, 9)))
    logp = np.log(p)
    q = rng.normal(size=(4, 9))
    plain = np.sum(p * (0.2 * logp - q), axis=1)
    loss, _ = actor_objective(p, logp, q, 0.2)
    np.testing.assert_allclose(loss, plain, atol=1e-12)
    prior = np.stack([rule_distribution(a) for a in range(4)])
    with_kl, _ = actor_objective(p, logp, q, 0.2, 3.0, prior)
    np.testing.assert_allclose(with_kl, plain + 3.0 * kl_divergence(p, logp, prior), atol=1e-12)
    with pytest.raises(SacConfigError):
        actor_objective(p, logp, q, 0.2, 3.0, None)


@given(st.integers(0, 10_000))
def test_actor_objective_logit_gradient(seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(1, 9))
    q = rng.normal(size=(1, 9))
    prior = rule_distribution(int(rng.integers(9)))[None]

    def f(z):
        p, lp = policy_head(z)
        return actor_objective(p, lp, q, 0.3, 0.7, prior)[0][0]

    p, lp = policy_head(z)
    _, g = actor_objective(p, lp, q, 0.3, 0.7, prior)
    num = np.array([(f(z + 1e-6 * e) - f(z - 1e-6 * e)) / 2e-6 for e in np.eye(9)[:, None]])
    np.testing.assert_allclose(g[0], num, atol=1e-7)


@pytest.mark.parametrize("kind", ["critic", "actor", "margin"])
def test_network_gradients(kind):
    assert max(gradient_errors(kind, seeds=range(3), n_params=40)) < 1e-4


def test_margin_terms_branches():
    q = np.array([[3.0, 1.0, 0.5], [3.0, 2.5, 0.0], [1.0, 1.0, 1.0], [0.0, 2.0, 0.0]])
    a = np.array([0, 0, 1, 0])
    loss, grad = margin_terms(q, a)
    # dominates by 2: zero; by 0.5: 0.5; all tied: 1; not the argmax: filtered
    np.testing.assert_allclose(loss, [0.0, 0.5, 1.0, 0.0])
    np.testing.assert_array_equal(grad[0], 0.0)
    np.testing.assert_array_equal(grad[1], [-1.0, 1.0, 0.0])
    assert grad[2].sum() == 0.0 and grad[2, 1] == -1.0
    np.testing.assert_array_equal(grad[3], 0.0)


def test_alpha_sign_table():
    agent = DiscreteSac(SacConfig(hidden=(8,)), np.random.default_rng(0))
    sharp = np.array([[0.999] + [0.001 / 8] * 8])
    start = agent.log_alpha
    agent.alpha_update(sharp, np.log(sharp))  # entropy ~0.01 > -1: alpha shrinks
    assert agent.log_alpha < start
    # entropy can never fall below a negative target, so alpha only decreases
    agent2 = DiscreteSac(SacConfig(hidden=(8,), target_entropy=3.0), np.random.default_rng(0))
    uni = np.full((1, 9), 1 / 9)
    agent2.alpha_update(uni, np.log(uni))  # ln 9 < 3: alpha grows
    assert agent2.log_alpha > math.log(0.01)


def test_alpha_fixed_point_and_floor():
    agent = DiscreteSac(SacConfig(hidden=(8,), target_entropy=math.log(9)),
                        np.random.default_rng(0))
    uni = np.full((1, 9), 1 / 9)
    before = agent.log_alpha
    agent.alpha_update(uni, np.log(uni))
    assert agent.log_alpha == pytest.approx(before, abs=1e-9)
    agent = DiscreteSac(SacConfig(hidden=(8,), alpha_lr=50.0), np.random.default_rng(0))
    agent.alpha_update(uni, np.log(uni))
    assert agent.log_alpha == -20.0 and agent.alpha > 0


def test_xi_tracks_alpha():
    agent = small_agent(1, soft_constraint=True)
    rng = np.random.default_rng(1)
    for _ in range(5):
        agent.update(random_batch(rng))
        assert agent.xi == 200.0 * agent.alpha
    assert small_agent(1, soft_constraint=False).xi == 0.0


def test_soft_constraint_needs_rule_actions():
    agent = small_agent(2, soft_constraint=True)
    b = random_batch(np.random.default_rng(2))
    b.rule_a[0] = -1
    with pytest.raises(SacConfigError):
        agent.actor_loss(b)
    # the plain agent never looks at rule actions
    small_agent(2, soft_constraint=False).actor_loss(b)


def test_target_update_blend():
    agent = small_agent(3)
    t0 = agent.q1_target.buffer.copy()
    online = agent.q1.buffer.copy()
    agent.target_soft_update(0.0)
    np.testing.assert_array_equal(agent.q1_target.buffer, t0)
    agent.q1.buffer[...] = 1.0
    agent.q1_target.buffer[...] = 3.0
    agent.target_soft_update(0.005)
    np.testing.assert_allclose(agent.q1_target.buffer, 3.0 * 0.995 + 0.005, atol=1e-15)
    agent.q1.buffer[...] = online
    agent.target_soft_update(1.0)
    np.testing.assert_array_equal(agent.q1_target.buffer, online)


def test_update_is_deterministic_and_finite():
    def run():
        agent = small_agent(4)
        rng = np.random.default_rng(4)
        for _ in range(10):
            stats = agent.update(random_batch(rng, demo_rows=3), demo_margin=True)
        return agent.actor.flat(), agent.q1.flat(), agent.log_alpha, stats
    a, b = run(), run()
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
    assert a[2] == b[2] and a[3] == b[3]
    assert all(np.isfinite(v) for v in a[3].values())


def test_greedy_and_sampled_actions():
    agent = small_agent(5)
    obs = np.random.default_rng(5).normal(size=26)
    probs, _ = agent.policy(obs)
    a, p = agent.act(obs, greedy=True)
    assert a == int(np.argmax(probs))
    with pytest.raises(ValueError):
        agent.act(obs)
    rng = np.random.default_rng(0)
    counts = np.bincount([agent.act(obs, rng)[0] for _ in range(3000)], minlength=9)
    np.testing.assert_allclose(counts / 3000, probs[0], atol=0.03)
    with pytest.raises(ValueError):
        DiscreteSac(SacConfig())


def test_chain_value_iteration_oracle():
    q = chain_value_iteration(0.8)
    # hand values: V(0) = 0.25/0.2, V(4) = 0.3/0.2
    assert q[0, 0] == pytest.approx(1.25) and q[4, 1] == pytest.approx(1.5)
    assert q.argmax(axis=1).tolist() == [0, 0, 1, 1, 1]


def test_float32_agent_updates():
    agent = DiscreteSac(SacConfig(hidden=(16,)), np.random.default_rng(0))
    assert agent.actor.dtype == np.float32
    rng = np.random.default_rng(0)
    b = random_batch(rng)
    b = Batch(b.s.astype(np.float32), b.a, b.r.astype(np.float32), b.s2.astype(np.float32),
              b.done.astype(np.float32), b.is_demo, b.rule_a)
    agent.update(b)
    assert agent.actor.buffer.dtype == np.float32 and agent.updates == 1
