import numpy as np
import pytest
from hypothesis import given, strategies as st

from ddztd.case_study import (
    EpisodeChain,
    LogModel,
    build_episode_chain,
    case_payoffs,
    check_dominance_condition,
    episode_costs,
    run_dd_ztd,
    solve_case,
    stop_time_distribution,
)
from ddztd.dynkin import ADC, MIXED
from ddztd.errors import InvalidSpec
from ddztd.policies import ConstantDefender, ShortestPathAttacker, ThresholdPolicy, evaluate_exact
from ddztd.rng import rng_stream
from ddztd.toys import THRESHOLD_LABELS, bayes_toy, case_log_model, lateral_toy
from ddztd.trust import BayesTrustEngine


def two_symbol_model(C=(1.0, 1.0), ell=(1.0, 1.0), Q=((0.6, 0.4), (0.5, 0.5))):
    return LogModel(("x0", "x1"), np.array(Q), np.array([0.5, 0.5]), np.array(C), np.array(ell))


def test_log_model_validation():
    with pytest.raises(InvalidSpec):
        two_symbol_model(Q=((0.6, 0.6), (0.5, 0.5)))
    with pytest.raises(InvalidSpec):
        two_symbol_model(C=(-1.0, 1.0))
    with pytest.raises(InvalidSpec):
        LogModel(("a",), np.eye(1), np.ones(1), np.ones(1), np.ones(1), ({}, {}))


def test_single_epoch_chain():
    chain = EpisodeChain.from_costs(two_symbol_model(), [2.0, 3.0], T=1)
    assert sorted(set(chain.epoch())) == [0, 1]
    assert np.allclose(chain.P.sum(axis=1), 1.0)
    with pytest.raises(InvalidSpec):
        EpisodeChain.from_costs(two_symbol_model(), [2.0, 3.0], T=0)
    with pytest.raises(InvalidSpec):
        EpisodeChain.from_costs(two_symbol_model(), [2.0, -1.0], T=1)


def test_degenerate_episode_cost_is_single_step_utility():
    spec = bayes_toy().with_overrides(horizon=1)
    lm = LogModel(("only",), np.eye(1), np.ones(1), np.ones(1), np.ones(1))
    att = ShortestPathAttacker(spec)
    mean, se = episode_costs(spec, ConstantDefender("mfa_frontier"), ShortestPathAttacker, BayesTrustEngine(att),
                             lm, 50, rng_stream(0))
    assert mean[0] == 1.0 and se[0] == 0.0  # one MFA check on the only edge, nothing breached yet


def test_episode_cost_estimate_within_three_standard_errors():
    spec = bayes_toy().with_overrides(horizon=2)
    lm = LogModel(("a", "b"), np.full((2, 2), 0.5), np.array([0.5, 0.5]), np.ones(2), np.ones(2),
                  ({}, {"prior": (0.2, 0.8)}))
    pol = ThresholdPolicy((0.5,))
    att = ShortestPathAttacker(spec)
    eng = BayesTrustEngine(att)
    mean, se = episode_costs(spec, pol, ShortestPathAttacker, eng, lm, 4000, rng_stream(1))
    for k, ov in enumerate(lm.overrides):
        s = spec.with_overrides(**ov)
        exact = evaluate_exact(s, pol, ShortestPathAttacker(s), eng).V_D
        assert abs(mean[k] - exact) <= 3 * se[k]


def test_payoff_substitution_example():
    chain = EpisodeChain.from_costs(two_symbol_model(C=(5.0, 5.0), ell=(2.0, 2.0)), [3.0, 4.0], T=2)
    phi, zeta, psi = case_payoffs(chain)
    for i, (epoch, A, x) in enumerate(chain.states):
        if epoch == 0:
            assert (phi[i], zeta[i], psi[i]) == (-5.0, -7.0, -[3.0, 4.0][x] - 2.0)


def test_degenerate_payoffs():
    chain = EpisodeChain.from_costs(two_symbol_model(ell=(0.0, 0.0)), [3.0, 4.0], T=2)
    phi, zeta, _ = case_payoffs(chain)
    assert np.array_equal(phi, zeta)
    chain = EpisodeChain.from_costs(two_symbol_model(C=(0.0, 0.0), ell=(1.5, 1.5)), [0.0, 0.0], T=2)
    phi, zeta, psi = case_payoffs(chain)
    assert np.all(phi == -0.0) and np.all(zeta == -1.5) and np.all(psi == -1.5)


chain_inputs = st.tuples(
    st.lists(st.floats(0, 10), min_size=2, max_size=2),
    st.lists(st.floats(0, 10), min_size=2, max_size=2),
    st.lists(st.floats(0, 10), min_size=2, max_size=2),
    st.floats(0.05, 0.95),
    st.integers(1, 3),
)


def fuzz_chain(C, ell, cost, q, T):
    lm = two_symbol_model(C=tuple(C), ell=tuple(ell), Q=((q, 1 - q), (1 - q, q)))
    return EpisodeChain.from_costs(lm, cost, T)


@given(chain_inputs)
def test_payoff_identities(args):
    chain = fuzz_chain(*args)
    phi, zeta, psi = case_payoffs(chain)
    x = chain.symbol_of()
    assert np.array_equal(zeta, phi - chain.ell[x])
    assert np.allclose(psi - zeta, chain.C[x] - chain.cost[x], atol=1e-12, rtol=0)


@given(chain_inputs)
def test_cost_bookkeeping_along_transitions(args):
    chain = fuzz_chain(*args)
    phi, _, _ = case_payoffs(chain)
    x = chain.symbol_of()
    for i, j in zip(*np.nonzero(chain.P)):
        if chain.states[i][0] == chain.T:
            continue
        expected = -chain.cost[x[i]] - (chain.C[x[j]] - chain.C[x[i]])
        assert abs((phi[j] - phi[i]) - expected) <= 1e-12 * max(1.0, abs(phi[i]))


def test_dominance_examples():
    chain = EpisodeChain.from_costs(two_symbol_model(), [2.0, 2.0], T=2)
    rep = check_dominance_condition(chain)
    assert rep.holds and rep.ordering == ADC
    chain = EpisodeChain.from_costs(two_symbol_model(), [2.0, 0.5], T=2)
    rep = check_dominance_condition(chain)
    assert not rep.holds and rep.failing_states and all(s[2] == 1 for s in rep.failing_states)
    chain = EpisodeChain.from_costs(two_symbol_model(ell=(0.0, 1.0)), [2.0, 2.0], T=2)
    rep = check_dominance_condition(chain)
    assert not rep.holds and not rep.ell_positive


@given(chain_inputs)
def test_dominance_implies_literal_ordering(args):
    rep = check_dominance_condition(fuzz_chain(*args))
    if rep.holds:
        assert rep.ordering == ADC


def test_ordering_without_dominance_at_the_boundary():
    # zero exploitation loss keeps psi <= zeta <= phi while positivity fails
    rep = check_dominance_condition(EpisodeChain.from_costs(two_symbol_model(ell=(0.0, 0.0)), [2.0, 2.0], T=1))
    assert rep.ordering == ADC and not rep.holds


def test_stop_time_distribution():
    chain = EpisodeChain.from_costs(two_symbol_model(), [2.0, 3.0], T=2)
    stop = np.zeros((3, chain.n), dtype=bool)
    stop[2] = True
    assert np.array_equal(stop_time_distribution(chain, stop), [0.0, 0.0, 1.0])
    stop[0] = True
    assert np.array_equal(stop_time_distribution(chain, stop), [1.0, 0.0, 0.0])


def shipped_case(seed=11):
    spec = lateral_toy().with_overrides(defense_budget=2)
    att = ShortestPathAttacker(spec)
    return run_dd_ztd(spec, ThresholdPolicy((0.5,), THRESHOLD_LABELS), ShortestPathAttacker, BayesTrustEngine(att),
                      case_log_model(), T=3, n_rollouts=300, rng=rng_stream(seed, 61))


def test_end_to_end_toy_passes_verifier():
    rep = shipped_case()
    assert rep.ordering == ADC and rep.dominance.holds
    assert rep.verify_passed and rep.verify_gain <= 1e-9
    assert abs(rep.cutoff_distribution.sum() - 1.0) < 1e-12
    again = shipped_case()
    assert np.array_equal(rep.values, again.values) and np.array_equal(rep.chain.cost, again.chain.cost)


def test_mixed_ordering_dispatches_nothing():
    chain = EpisodeChain.from_costs(two_symbol_model(), [2.0, 0.5], T=2)
    rep = solve_case(chain)
    assert rep.ordering == MIXED and rep.solver is None and "mixed ordering" in rep.message
