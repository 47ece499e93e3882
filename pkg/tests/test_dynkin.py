import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from chains import random_chain
from ddztd.errors import InvalidSpec, OrderingViolation, StateSpaceTooLarge
from ddztd.dynkin import (
    ADC,
    DDC,
    MIXED,
    DdgiaSpec,
    DynkinGameSpec,
    all_markov_rules,
    brute_force_values,
    check_monotone,
    classify_ordering,
    ddgia_bounds,
    payoff,
    semigroup_apply,
    solve_adc,
    solve_ddc,
    solve_markov_saddle,
    verify_dde,
)
from ddztd.rng import rng_stream

seeds = st.integers(0, 2**32)
sizes = st.tuples(st.integers(1, 3), st.integers(0, 3))


def const_chain(n, T, phi, zeta, psi):
    return DynkinGameSpec(np.full((n, n), 1.0 / n), np.full(n, phi), np.full(n, zeta), np.full(n, psi), T)


def test_spec_validation():
    with pytest.raises(InvalidSpec):
        DynkinGameSpec(np.array([[0.5, 0.4], [0.5, 0.5]]), [0, 0], [0, 0], [0, 0], 1)
    with pytest.raises(InvalidSpec):
        DynkinGameSpec(np.eye(2), [0, 0], [3, 0], [1, 1], 1)  # zeta outside [phi, psi]
    with pytest.raises(InvalidSpec):
        DynkinGameSpec(np.eye(2), [0, 0], [0, 0], [0, 0], -1)


def test_semigroup_identity_and_law():
    spec = random_chain(rng_stream(1), 4, 2, "DDC")
    g = np.array([1.0, -2.0, 0.5, 3.0])
    assert np.array_equal(semigroup_apply(spec, g, 0), g)
    for s, t in [(1, 2), (3, 4), (0, 5)]:
        assert np.allclose(semigroup_apply(spec, g, s + t), semigroup_apply(spec, semigroup_apply(spec, g, t), s),
                           atol=1e-10, rtol=0)
    assert np.allclose(semigroup_apply(spec, g, 3), np.linalg.matrix_power(spec.P, 3) @ g, atol=1e-12)


def test_semigroup_monte_carlo_within_four_sigma():
    spec = random_chain(rng_stream(2), 3, 2, "DDC")
    g = np.array([1.0, -2.0, 4.0])
    mean, se = semigroup_apply(spec, g, 3, mode="mc", n_samples=100_000, rng=rng_stream(3))
    assert np.all(np.abs(mean - semigroup_apply(spec, g, 3)) <= 4 * se)


def test_classify_examples():
    assert classify_ordering(const_chain(2, 1, 2.0, 1.0, 0.0)) == ADC
    assert classify_ordering(const_chain(2, 1, 0.0, 1.0, 2.0)) == DDC
    crossing = DynkinGameSpec(np.eye(2), [2.0, 0.0], [1.0, 1.0], [0.0, 2.0], 1)
    assert classify_ordering(crossing) == MIXED


@given(seeds, st.integers(1, 4))
def test_classify_matches_statewise_comparison(seed, n):
    rng = rng_stream(seed)
    a, b = rng.integers(-2, 3, n).astype(float), rng.integers(-2, 3, n).astype(float)
    phi, psi = a, b
    zeta = np.minimum(a, b) + rng.integers(0, 2, n) * np.abs(a - b)
    spec = DynkinGameSpec(np.eye(n), phi, zeta, psi, 1)
    adc = all(psi[x] <= zeta[x] <= phi[x] for x in range(n))
    ddc = all(phi[x] <= zeta[x] <= psi[x] for x in range(n))
    assert classify_ordering(spec) == (ADC if adc else DDC if ddc else MIXED)


# ---------------------------------------------------------------------------
# solvers


def literal_branch_recursion(spec):
    T, n = spec.T, spec.n
    v = [[0.0] * n for _ in range(T + 1)]
    v[T] = [float(z) for z in spec.zeta]
    for t in range(T - 1, -1, -1):
        for x in range(n):
            cont = sum(spec.P[x, y] * v[t + 1][y] for y in range(n))
            v[t][x] = cont if spec.phi[x] < cont else float(spec.zeta[x])
    return np.array(v)


def test_adc_trivial_cases():
    spec = random_chain(rng_stream(4), 3, 0, "ADC")
    assert np.array_equal(solve_adc(spec).values, spec.zeta[None, :])
    sol = solve_adc(const_chain(3, 3, 1.5, 1.5, 1.5))
    assert np.all(sol.values == 1.5) and sol.tau_stop.all() and sol.sigma_stop.all()
    with pytest.raises(OrderingViolation):
        solve_adc(const_chain(2, 1, 0.0, 1.0, 2.0))


@given(seeds, st.booleans())
def test_adc_matches_literal_recursion(seed, integer):
    spec = random_chain(rng_stream(seed), 3, 3, "ADC", integer)
    assert np.allclose(solve_adc(spec).values, literal_branch_recursion(spec), atol=1e-12, rtol=0)


@pytest.mark.xfail(strict=True, reason="the branch recursion is not a saddle once the continuation region is "
                                       "nonempty; see solve_markov_saddle")
def test_adc_output_passes_saddle_check():
    bad = 0
    for k in range(20):
        spec = random_chain(rng_stream(5, k), 3, 3, "ADC")
        sol = solve_adc(spec)
        bad += not verify_dde(spec, sol.tau_stop, sol.sigma_stop, 1e-9).passed
    assert bad == 0


def test_adc_with_empty_continuation_region_is_a_saddle():
    # phi dominates every continuation value, so the recursion stops everywhere
    P = np.array([[0.5, 0.5], [0.2, 0.8]])
    spec = DynkinGameSpec(P, phi=[5.0, 6.0], zeta=[1.0, 2.0], psi=[0.0, 0.0], T=3)
    sol = solve_adc(spec)
    assert np.array_equal(sol.values, np.tile(spec.zeta, (4, 1)))
    assert verify_dde(spec, sol.tau_stop, sol.sigma_stop).passed


@given(seeds, sizes, st.booleans())
def test_markov_saddle_on_adc_chains(seed, size, integer):
    n, T = size
    spec = random_chain(rng_stream(seed), n, T, "ADC", integer)
    sol = solve_markov_saddle(spec)
    assert verify_dde(spec, sol.tau_stop, sol.sigma_stop, 1e-9).passed
    lower, upper = brute_force_values(spec)
    assert np.allclose(sol.values[0], lower, atol=1e-9) and np.allclose(sol.values[0], upper, atol=1e-9)


def test_ddc_hand_example():
    P = np.array([[0.0, 1.0], [1.0, 0.0]])
    spec = DynkinGameSpec(P, [0.0, 0.0], [1.0, 1.0], [2.0, 2.0], 2)
    sol = solve_ddc(spec)
    # v_2 = zeta = 1; v_1 = min(2, max(0, 1)) = 1; v_0 = 1; nobody stops early
    assert np.array_equal(sol.values, np.ones((3, 2)))
    assert not sol.tau_stop[:2].any() and not sol.sigma_stop[:2].any()
    assert np.array_equal(solve_ddc(random_chain(rng_stream(6), 2, 0, "DDC")).values[0],
                          random_chain(rng_stream(6), 2, 0, "DDC").zeta)


@given(seeds, sizes, st.booleans())
def test_ddc_identity_envelope_and_both_forms(seed, size, integer):
    n, T = size
    spec = random_chain(rng_stream(seed), n, T, "DDC", integer)
    v = solve_ddc(spec).values
    for t in range(T):
        c = spec.P @ v[t + 1]
        assert np.array_equal(v[t], np.minimum(spec.psi, np.maximum(spec.phi, c)))
        assert np.array_equal(v[t], np.maximum(spec.phi, np.minimum(spec.psi, c)))
        assert np.all(spec.phi <= v[t]) and np.all(v[t] <= spec.psi)


@given(seeds, sizes, st.booleans())
def test_ddc_solution_is_saddle_and_value(seed, size, integer):
    n, T = size
    spec = random_chain(rng_stream(seed), n, T, "DDC", integer)
    sol = solve_ddc(spec)
    assert verify_dde(spec, sol.tau_stop, sol.sigma_stop, 1e-9).passed
    assert np.allclose(payoff(spec, sol.tau_stop, sol.sigma_stop), sol.values, atol=1e-12)
    lower, upper = brute_force_values(spec)
    assert np.allclose(lower, sol.values[0], atol=1e-12) and np.allclose(upper, sol.values[0], atol=1e-12)


# ---------------------------------------------------------------------------
# payoff and verification


def path_payoff(spec, tau, sig, x0):
    """Expected H by listing every path and its stopping times."""
    T, n = spec.T, spec.n
    total = 0.0
    for tail in itertools.product(range(n), repeat=T):
        path = (x0,) + tail
        p = np.prod([spec.P[a, b] for a, b in zip(path, path[1:])]) if T else 1.0
        ts = min([t for t in range(T) if tau[t][path[t]]] + [T])
        ss = min([t for t in range(T) if sig[t][path[t]]] + [T])
        x = path[min(ts, ss)]
        total += p * (spec.phi[x] if ts < ss else spec.psi[x] if ss < ts else spec.zeta[x])
    return total


def test_payoff_simple_rules():
    spec = random_chain(rng_stream(7), 3, 3, "DDC")
    stop = np.ones((4, 3), dtype=bool)
    never = np.zeros((4, 3), dtype=bool)
    assert np.array_equal(payoff(spec, stop, stop)[0], spec.zeta)
    assert np.array_equal(payoff(spec, stop, never)[0], spec.phi)
    assert np.array_equal(payoff(spec, never, stop)[0], spec.psi)


@given(seeds, st.integers(1, 3), st.integers(0, 4))
def test_payoff_matches_path_enumeration(seed, n, T):
    rng = rng_stream(seed)
    spec = random_chain(rng, n, T, "ADC" if seed % 2 else "DDC")
    tau = rng.random((T + 1, n)) < 0.4
    sig = rng.random((T + 1, n)) < 0.4
    W = payoff(spec, tau, sig)
    for x in range(n):
        assert abs(W[0, x] - path_payoff(spec, tau, sig, x)) < 1e-12
    mu = rng.dirichlet(np.ones(n))
    assert abs(mu @ W[0] - sum(mu[x] * path_payoff(spec, tau, sig, x) for x in range(n))) < 1e-12


def test_shifted_stop_set_fails_with_location():
    P = np.array([[0.0, 1.0], [1.0, 0.0]])
    spec = DynkinGameSpec(P, [0.0, 0.0], [1.0, 1.0], [2.0, 2.0], 2)
    sol = solve_ddc(spec)
    tau = sol.tau_stop.copy()
    tau[1, 0] = True  # stopping at phi = 0 forgoes the continuation value 1
    rep = verify_dde(spec, tau, sol.sigma_stop)
    assert not rep.passed
    # the shifted cell, and the subgame one step earlier whose path runs into it
    assert sorted(v[:3] for v in rep.violations()) == [("tau", 0, 1), ("tau", 1, 0)]
    assert all(v[3] == pytest.approx(1.0) for v in rep.violations())


def test_zero_horizon_always_passes():
    spec = random_chain(rng_stream(8), 3, 0, "DDC")
    rule = np.ones((1, 3), dtype=bool)
    assert verify_dde(spec, rule, rule).passed


def test_enumeration_and_dp_agree():
    for k in range(10):
        spec = random_chain(rng_stream(9, k), 3, 3, "DDC")
        rng = rng_stream(10, k)
        tau, sig = rng.random((4, 3)) < 0.5, rng.random((4, 3)) < 0.5
        a, b = verify_dde(spec, tau, sig, method="enumerate"), verify_dde(spec, tau, sig, method="dp")
        assert np.allclose(a.tau_gain, b.tau_gain, atol=1e-12) and np.allclose(a.sigma_gain, b.sigma_gain, atol=1e-12)


def test_enumeration_cap():
    with pytest.raises(StateSpaceTooLarge):
        all_markov_rules(5, 4, cap=2**16)


def literal_inf_sup(spec):
    """Pure Markov-rule max-min and min-max by looping over every pair (tiny chains only)."""
    rules = list(all_markov_rules(spec.T, spec.n))
    M = np.array([[payoff(spec, a, b)[0] for b in rules] for a in rules])  # (tau, sigma, x)
    return M.min(axis=1).max(axis=0), M.max(axis=0).min(axis=0)


@pytest.mark.parametrize("k", range(5))
def test_brute_force_values_against_pairwise_loop(k):
    spec = random_chain(rng_stream(11, k), 2, 3, "DDC", integer=bool(k % 2))
    lo, hi = literal_inf_sup(spec)
    blo, bhi = brute_force_values(spec)
    assert np.allclose(lo, blo, atol=1e-12) and np.allclose(hi, bhi, atol=1e-12)


# ---------------------------------------------------------------------------
# monotonicity


def test_monotone_constant_payoffs():
    ok, failures = check_monotone(const_chain(2, 3, 1.0, 1.0, 1.0))
    assert ok and failures == []


@given(seeds, sizes, st.booleans())
def test_monotone_on_random_adc(seed, size, integer):
    n, T = size
    assert check_monotone(random_chain(rng_stream(seed), n, T, "ADC", integer))[0]


def test_monotone_negative_control():
    P = np.array([[0.0, 1.0], [0.0, 1.0]])
    spec = DynkinGameSpec(P, [-3.0, -1.0], [2.0, -1.0], [3.0, -1.0], 1)
    with pytest.raises(OrderingViolation):
        check_monotone(spec)
    ok, failures = check_monotone(spec, require_adc=False)
    assert not ok and failures[0]["x"] == 0


# ---------------------------------------------------------------------------
# information asymmetry


def test_fully_revealing_signals_recover_symmetric_value():
    for k in range(4):
        spec = random_chain(rng_stream(12, k), 2, 2, "DDC" if k % 2 else "ADC")
        bounds = ddgia_bounds(DdgiaSpec.from_marginals(spec, np.eye(2), np.eye(2)))
        v = solve_markov_saddle(spec).values[0]
        assert np.allclose(bounds.lower, v, atol=1e-9) and np.allclose(bounds.upper, v, atol=1e-9)
        assert bounds.has_value.all()


@given(seeds)
def test_weak_duality(seed):
    rng = rng_stream(seed)
    spec = random_chain(rng, 2, 2, "DDC" if seed % 2 else "ADC")
    O1 = rng.dirichlet(np.ones(2), size=2)
    O2 = np.full((2, 2), 0.5)
    b = ddgia_bounds(DdgiaSpec.from_marginals(spec, O1, O2))
    assert np.all(b.lower <= b.upper + 1e-12)


def test_uninformative_signals_use_constant_rules():
    spec = random_chain(rng_stream(13), 2, 2, "DDC")
    b = ddgia_bounds(DdgiaSpec.from_marginals(spec, np.ones((2, 1)), np.ones((2, 1))))
    # with one signal value a rule is just a fixed stopping time
    times = range(spec.T + 1)

    def value(s, r, x0):
        tau = np.zeros((spec.T + 1, 2), dtype=bool)
        sig = np.zeros((spec.T + 1, 2), dtype=bool)
        tau[s:] = True
        sig[r:] = True
        return payoff(spec, tau, sig)[0, x0]

    for x0 in range(2):
        lo = max(min(value(s, r, x0) for r in times) for s in times)
        hi = min(max(value(s, r, x0) for s in times) for r in times)
        assert b.lower[x0] == pytest.approx(lo, abs=1e-12) and b.upper[x0] == pytest.approx(hi, abs=1e-12)


def test_emission_validation():
    spec = random_chain(rng_stream(14), 2, 1, "DDC")
    with pytest.raises(InvalidSpec):
        DdgiaSpec(spec, np.ones((2, 2, 2)))
