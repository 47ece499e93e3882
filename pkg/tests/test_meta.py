import numpy as np
import pytest
from hypothesis import given, strategies as st

from ddztd.errors import EmptyScenarioSet
from ddztd.meta import MetaConfig, MetaPolicy, Scenario, ScenarioObjectives, adapt, evaluate_generalization, meta_objective, train_meta
from ddztd.policies import ShortestPathAttacker, SpsaConfig, ThresholdObjective, train_threshold_spsa
from ddztd.rng import rng_stream
from ddztd.toys import THRESHOLD_LABELS, lateral_toy, meta_scenarios
from ddztd.trust import BayesTrustEngine


def quadratic(target):
    return lambda t, rng: (t - target) ** 2


def test_zero_step_is_identity():
    pol = adapt(MetaPolicy(0.37, 0.0), quadratic(0.9), rng_stream(0))
    assert pol.thresholds == (0.37,)


def test_positive_gradient_lowers_threshold_and_clamps():
    f = lambda t, rng: 2.0 * t  # gradient 2 everywhere
    assert adapt(MetaPolicy(0.5, 0.1), f, rng_stream(0)).thresholds[0] == pytest.approx(0.3, abs=1e-12)
    assert adapt(MetaPolicy(0.5, 1.0), f, rng_stream(0)).thresholds[0] == 0.0


def test_quadratic_surrogate_steps():
    # gradient of (t - t*)^2 is 2 (t - t*): a step of 1/4 lands halfway, 1/2 lands on t*
    for tau, target in [(0.2, 0.8), (0.9, 0.1), (0.5, 0.5)]:
        half = adapt(MetaPolicy(tau, 0.25), quadratic(target), rng_stream(1), c=0.05).thresholds[0]
        full = adapt(MetaPolicy(tau, 0.5), quadratic(target), rng_stream(1), c=0.05).thresholds[0]
        assert half == pytest.approx((tau + target) / 2, abs=1e-12)
        assert full == pytest.approx(target, abs=1e-12)


@given(st.floats(0, 1), st.floats(0, 50), st.floats(-3, 3), st.integers(0, 2**32))
def test_adapted_threshold_in_unit_interval(tau, gamma, slope, seed):
    pol = adapt(MetaPolicy(tau, gamma), lambda t, rng: slope * t ** 3, rng_stream(seed))
    assert 0.0 <= pol.thresholds[0] <= 1.0


def test_meta_policy_validation():
    with pytest.raises(ValueError):
        MetaPolicy(1.5, 0.1)
    with pytest.raises(ValueError):
        MetaPolicy(0.5, -0.1)


def objectives(scenarios):
    def att(spec):
        return ShortestPathAttacker(spec)

    return ScenarioObjectives(lateral_toy(), scenarios, att, lambda spec: BayesTrustEngine(att(spec)),
                              THRESHOLD_LABELS, exact=True)


def test_empty_scenario_set():
    with pytest.raises(EmptyScenarioSet):
        objectives([])


def test_single_scenario_objective_is_scenario_objective():
    objs = objectives([Scenario("only", {})])
    spec = lateral_toy()
    att = ShortestPathAttacker(spec)
    direct = ThresholdObjective(spec, att, BayesTrustEngine(att), THRESHOLD_LABELS, exact=True)
    for tau in np.linspace(0, 1, 11):
        assert meta_objective(MetaPolicy(tau, 0.0), objs, rng_stream(0), 0.3, 1) == pytest.approx(direct(tau), abs=1e-12)


def test_duplicated_scenarios_match_single():
    cfg = MetaConfig(iterations=15, a=0.3, c=0.3, fix_gamma=True, seed=2)
    one = train_meta(objectives([Scenario("s", {})]), cfg)
    two = train_meta(objectives([Scenario("s", {}), Scenario("t", {})]), cfg)
    assert one.meta == two.meta
    assert [r["tau"] for r in one.curve] == [r["tau"] for r in two.curve]


def test_training_is_deterministic_and_never_worse():
    cfg = MetaConfig(iterations=10, a=0.3, c=0.3, gamma_scale=0.1, gamma_max=0.3, adapt_c=0.3, seed=4)
    a = train_meta(objectives(meta_scenarios()), cfg)
    b = train_meta(objectives(meta_scenarios()), cfg)
    assert a.curve == b.curve and a.meta == b.meta
    assert a.final_value <= a.initial_value + 1e-12


def test_fixed_step_meta_training_is_mixture_training():
    # with a fixed policy the value is linear in the costs, so the mixture of the two
    # scenarios equals one spec with averaged costs
    scen = meta_scenarios()
    objs = objectives(scen)
    mixed = lateral_toy().with_overrides(breach_cost=5.5, default_edge_cost=1.5)
    att = ShortestPathAttacker(mixed)
    mixed_obj = ThresholdObjective(mixed, att, BayesTrustEngine(att), THRESHOLD_LABELS, exact=True)
    grid = np.round(np.arange(0, 1.0001, 0.01), 2)
    for tau in grid:
        assert meta_objective(MetaPolicy(tau, 0.0), objs, rng_stream(0), 0.3, 1) == pytest.approx(mixed_obj(tau), abs=1e-12)
    meta = train_meta(objs, MetaConfig(iterations=40, a=0.3, c=0.3, fix_gamma=True, seed=5))
    plain = train_threshold_spsa(mixed, att, BayesTrustEngine(att),
                                 SpsaConfig(iterations=40, a=0.3, c=0.3, exact=True, labels=THRESHOLD_LABELS, seed=5))
    assert meta.meta.gamma == 0.0
    # the objective is a step function; both learners stop on the same plateau
    assert mixed_obj(meta.meta.tau) == pytest.approx(mixed_obj(plain.policy.thresholds[0]), abs=1e-12)
    assert mixed_obj(meta.meta.tau) <= mixed_obj(0.5) + 1e-12


def test_generalization_report():
    held = objectives([Scenario("h1", {"breach_cost": 4.0}), Scenario("h2", {"p_pass": 0.5})])
    rows = evaluate_generalization(MetaPolicy(0.4, 0.0), held, 0.4, seed=1)
    assert len(rows) == 2
    assert all(r["V_adapted"] == r["V_baseline"] for r in rows)
    with pytest.raises(ValueError):
        evaluate_generalization(MetaPolicy(0.4, 0.0), held, 0.4, training_ids=["h2"])
