import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from ddztd.errors import EvaluationFailure
from ddztd.policies import (
    ConstantDefender,
    PgConfig,
    ShortestPathAttacker,
    SoftmaxDefender,
    SpsaConfig,
    ThresholdObjective,
    ThresholdPolicy,
    UniformAttacker,
    attacker_best_response,
    enumerate_attacker_policies,
    evaluate_exact,
    policy_gradient_estimate,
    replay_beliefs,
    rollout,
    simulate_batch,
    spsa_gradient,
    threshold_act,
    train_policy_gradient,
    train_threshold_spsa,
)
from ddztd.rng import rng_stream
from ddztd.toys import THRESHOLD_LABELS, bayes_toy, lateral_toy, pg_toy
from ddztd.trust import BayesTrustEngine


def test_threshold_act_examples():
    pol = ThresholdPolicy((0.5,))
    assert threshold_act(pol, [0.3, 0.7]) == 0
    assert threshold_act(pol, [0.5, 0.5]) == 0
    assert threshold_act(pol, [0.7, 0.3]) == 1


def test_threshold_policy_validation():
    with pytest.raises(ValueError):
        ThresholdPolicy((0.6, 0.4))
    with pytest.raises(ValueError):
        ThresholdPolicy((1.2,))
    with pytest.raises(ValueError):
        ThresholdPolicy((0.2, 0.4), ("idle", "mfa_all"))


@given(st.lists(st.floats(0, 1), min_size=1, max_size=4), st.floats(0, 1), st.floats(0, 1))
def test_threshold_act_monotone(th, x, y):
    pol = ThresholdPolicy(tuple(sorted(th)))
    lo, hi = min(x, y), max(x, y)
    c_lo, c_hi = threshold_act(pol, [lo, 1 - lo]), threshold_act(pol, [hi, 1 - hi])
    assert c_lo <= c_hi
    # literal cell definition: number of thresholds strictly below the score
    assert c_lo == sum(t < lo for t in pol.thresholds)


def test_single_step_horizon_gives_one_record():
    spec = bayes_toy().with_overrides(horizon=1)
    att = ShortestPathAttacker(spec)
    tr = rollout(spec, ConstantDefender("idle"), att, 1, BayesTrustEngine(att), rng_stream(0))
    assert len(tr.records) == 1


def test_deterministic_play_ignores_seed():
    spec = bayes_toy().with_overrides(alpha=0.0, beta=1.0)
    att = ShortestPathAttacker(spec)
    eng = BayesTrustEngine(att)
    runs = [rollout(spec, ConstantDefender("mfa_frontier"), att, 1, eng, rng_stream(s)) for s in range(5)]
    assert all(r.records == runs[0].records for r in runs)


def test_hand_traced_costs_on_two_nodes():
    spec = bayes_toy()  # breach cost 20, unit MFA cost
    att = ShortestPathAttacker(spec)
    eng = BayesTrustEngine(att)
    # idle: step 1 moves onto the target, steps 2 and 3 each pay the breach cost
    tr = rollout(spec, ConstantDefender("idle"), att, 1, eng, rng_stream(3))
    assert tr.total_u_D() == 40.0
    # MFA on the only edge: the malicious user is rejected three times, each check costs 1
    tr = rollout(spec, ConstantDefender("mfa_frontier"), att, 1, eng, rng_stream(3))
    assert tr.total_u_D() == 3.0
    assert [r.state.current for r in tr.records] == ["a", "a", "a"]


@given(st.integers(0, 2**32), st.floats(0, 1))
def test_replay_reproduces_stored_beliefs(seed, tau):
    spec = lateral_toy()
    att = UniformAttacker(spec)
    eng = BayesTrustEngine(att)
    tr = rollout(spec, ThresholdPolicy((tau,), THRESHOLD_LABELS), att, seed % 2, eng, rng_stream(seed))
    for stored, again in zip(tr.records, replay_beliefs(spec, tr, eng)):
        assert np.allclose(stored.belief, again, atol=1e-12, rtol=0)


def test_simulate_batch_is_independent_of_jobs():
    spec = lateral_toy()
    att = ShortestPathAttacker(spec)
    eng = BayesTrustEngine(att)
    a = simulate_batch(spec, ThresholdPolicy((0.6,)), att, eng, 12, seed=5)
    b = simulate_batch(spec, ThresholdPolicy((0.6,)), att, eng, 12, seed=5, jobs=3)
    assert [t.records for t in a] == [t.records for t in b]


# ---------------------------------------------------------------------------
# policy gradient


def test_gradient_zero_for_parameter_free_policy():
    spec = pg_toy().with_overrides(defense_budget=0)
    att = ShortestPathAttacker(spec)
    pol = SoftmaxDefender(np.ones((1, 3)))
    batch = simulate_batch(spec, pol, att, BayesTrustEngine(att), 50, seed=1)
    assert np.array_equal(policy_gradient_estimate(batch, pol, spec), np.zeros((1, 3)))


def exact_value(spec, weights, att, eng):
    return evaluate_exact(spec, SoftmaxDefender(weights), att, eng).V_D


def fd_gradient(spec, W, att, eng, h=1e-5):
    g = np.zeros_like(W)
    for i in np.ndindex(W.shape):
        a, b = W.copy(), W.copy()
        a[i] += h
        b[i] -= h
        g[i] = (exact_value(spec, a, att, eng) - exact_value(spec, b, att, eng)) / (2 * h)
    return g


def per_trajectory_gradients(spec, W, att, eng, n, seed):
    pol = SoftmaxDefender(W)
    batch = simulate_batch(spec, pol, att, eng, n, seed)
    return np.array([policy_gradient_estimate([t], pol, spec) for t in batch])


def test_policy_gradient_unbiased_on_toy():
    spec = pg_toy()
    att = ShortestPathAttacker(spec)
    eng = BayesTrustEngine(att)
    W = np.array([[0.2, -0.5, 0.3], [-0.1, 0.4, -0.6]])
    g = per_trajectory_gradients(spec, W, att, eng, 6000, seed=11)
    mean, se = g.mean(axis=0), g.std(axis=0, ddof=1) / math.sqrt(len(g))
    assert np.all(np.abs(mean - fd_gradient(spec, W, att, eng)) <= 4 * se)


def test_doubling_batch_halves_variance():
    spec = pg_toy()
    att = ShortestPathAttacker(spec)
    eng = BayesTrustEngine(att)
    W = np.array([[0.2, -0.5, 0.3], [-0.1, 0.4, -0.6]])
    K = 40
    pool = per_trajectory_gradients(spec, W, att, eng, 50 * 3 * K, seed=12)[:, 0, 1]
    small = pool[: 50 * K].reshape(50, K).mean(axis=1)
    large = pool[50 * K:].reshape(50, 2 * K).mean(axis=1)
    ratio = small.var(ddof=1) / large.var(ddof=1)
    assert 0.7 * 2 <= ratio <= 1.3 * 2


def test_train_policy_gradient_basics():
    spec = pg_toy()
    att = ShortestPathAttacker(spec)
    eng = BayesTrustEngine(att)
    res = train_policy_gradient(spec, att, eng, PgConfig(iterations=0))
    assert np.array_equal(res.policy.weights, SoftmaxDefender.zeros(spec).weights) and res.curve == []
    cfg = PgConfig(iterations=30, batch=64, lr=0.05, seed=7, baseline=True)
    a = train_policy_gradient(spec, att, eng, cfg)
    b = train_policy_gradient(spec, att, eng, cfg)
    assert a.curve == b.curve
    v0 = exact_value(spec, SoftmaxDefender.zeros(spec).weights, att, eng)
    assert exact_value(spec, a.policy.weights, att, eng) <= v0 - 0.1


# ---------------------------------------------------------------------------
# SPSA


def test_spsa_quadratic_scalar_is_exact():
    f = lambda t, rng: (t - 0.5) ** 2
    for k in range(10):
        assert spsa_gradient(f, 0.7, 0.05, rng_stream(k)) == pytest.approx(0.4, abs=1e-12)
    assert spsa_gradient(lambda t, rng: 3.0, 0.7, 0.05, rng_stream(0)) == 0.0


def test_spsa_vector_unbiased_on_separable_quadratic():
    c = np.array([0.1, 0.4, 0.9])
    f = lambda t, rng: float(np.sum((t - c) ** 2 * np.array([1.0, 2.0, 3.0])))
    x = np.array([0.5, 0.5, 0.5])
    est = np.array([spsa_gradient(f, x, 0.01, rng_stream(1, k)) for k in range(4000)])
    truth = 2 * np.array([1.0, 2.0, 3.0]) * (x - c)
    se = est.std(axis=0, ddof=1) / math.sqrt(len(est))
    assert np.all(np.abs(est.mean(axis=0) - truth) <= 4 * se)


def test_spsa_failure_surfaces():
    with pytest.raises(EvaluationFailure):
        spsa_gradient(lambda t, rng: float("nan"), 0.3, 0.1, rng_stream(0))
    with pytest.raises(ValueError):
        spsa_gradient(lambda t, rng: 0.0, 0.3, 0.0, rng_stream(0))


def test_spsa_threshold_goes_to_zero_when_defense_never_pays():
    spec = lateral_toy().with_overrides(breach_cost=0.0)
    att = ShortestPathAttacker(spec)
    eng = BayesTrustEngine(att)
    cfg = SpsaConfig(iterations=40, a=0.2, c=0.2, tau0=(0.8,), exact=True, labels=THRESHOLD_LABELS)
    res = train_threshold_spsa(spec, att, eng, cfg)
    assert all(0.0 <= r["tau"] <= 1.0 for r in res.curve)
    obj = ThresholdObjective(spec, att, eng, THRESHOLD_LABELS, exact=True)
    # the learned policy is never active: defend only at scores <= tau, and all scores exceed it
    assert obj(res.policy.thresholds) == 0.0
    assert res.policy.thresholds[0] < 0.5


def test_spsa_training_is_deterministic():
    spec = lateral_toy()
    att = ShortestPathAttacker(spec)
    eng = BayesTrustEngine(att)
    cfg = SpsaConfig(iterations=5, n_eval=30, labels=THRESHOLD_LABELS, seed=3)
    assert train_threshold_spsa(spec, att, eng, cfg).curve == train_threshold_spsa(spec, att, eng, cfg).curve


# ---------------------------------------------------------------------------
# attacker best response


def dijkstra_cost(spec, source, target):
    nodes = list(spec.graph.nodes)
    idx = {n: i for i, n in enumerate(nodes)}
    rows, cols, w = zip(*[(idx[u], idx[v], spec.move_cost((u, v))) for u, v in spec.graph.edges])
    m = csr_matrix((w, (rows, cols)), shape=(len(nodes), len(nodes)))
    return float(dijkstra(m, indices=idx[source])[idx[target]])


def test_best_response_against_idle_follows_shortest_path():
    spec = lateral_toy().with_overrides(reward=0.0, move_costs={("a", "c"): 3.0})
    eng = BayesTrustEngine(UniformAttacker(spec))
    br = attacker_best_response(spec, ConstantDefender("idle"), eng)
    assert br.value[1] == pytest.approx(dijkstra_cost(spec, "a", "c"))
    first = br.policy.distribution(spec.initial_state(), 1)[0][0]
    assert first == ("a", "b")


def test_best_response_when_target_unreachable_in_time():
    spec = lateral_toy().with_overrides(horizon=1)
    eng = BayesTrustEngine(UniformAttacker(spec))
    br = attacker_best_response(spec, ConstantDefender("idle"), eng)
    assert np.allclose(br.value, [1.0, 1.0])


def test_best_response_matches_policy_enumeration():
    spec = bayes_toy().with_overrides(attacker_mfa_cost=50.0, reward=2.0, defense_budget=1)
    eng = BayesTrustEngine(UniformAttacker(spec))
    defender = ConstantDefender("mfa_all")
    br = attacker_best_response(spec, defender, eng)
    values = np.array([evaluate_exact(spec, defender, p, eng).V_A_by_type
                       for p in enumerate_attacker_policies(spec)])
    assert np.allclose(br.value, values.min(axis=0), atol=1e-12)
    assert np.all(values >= br.value - 1e-12)


def test_best_response_lower_bounds_enumeration_with_threshold_defender():
    spec = lateral_toy().with_overrides(horizon=2)
    eng = BayesTrustEngine(ShortestPathAttacker(spec))
    defender = ThresholdPolicy((0.55,), THRESHOLD_LABELS)
    br = attacker_best_response(spec, defender, eng)
    values = np.array([evaluate_exact(spec, defender, p, eng).V_A_by_type
                       for p in enumerate_attacker_policies(spec)])
    assert np.allclose(br.value, values.min(axis=0), atol=1e-12)
    got = evaluate_exact(spec, defender, br.policy, eng).V_A_by_type
    assert np.allclose(got, br.value, atol=1e-12)
