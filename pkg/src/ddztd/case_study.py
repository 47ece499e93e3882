"""Episodic zero-trust play wrapped into a Dynkin stopping game.

Each episode runs ``H`` steps of the lateral-movement game under a fixed zero-trust
layer (trust engine + access policy).  Between episodes a synthetic log symbol ``x``
evolves as a Markov chain; the symbol selects scenario parameters for the next
episode, the defender's cut-off cost ``C(x)`` and the exploitation loss ``l(x)``.

The Dynkin chain state at decision epoch ``k`` is ``(k, A, x)`` with ``A`` the expected
ZTD cost accumulated before epoch ``k`` (optionally bucketed) and ``x`` the latest
log symbol.  Payoffs (rewards to the maximising defender, i.e. negative costs) are

    phi  = -A - C(x)                 early termination by the defender
    zeta = phi - l(x)                simultaneous termination
    psi  = -A - c(x) - l(x)          the attacker moves first; episode cost c(x) is paid
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .aimg import AimgSpec
from .dynkin import (
    ADC,
    MIXED,
    DynkinGameSpec,
    classify_payoffs,
    solve_adc,
    solve_ddc,
    verify_dde,
)
from .errors import InvalidSpec
from .policies import evaluate_exact, simulate_batch
from .rng import child_seed

log = logging.getLogger(__name__)

IDENTITY_TOL = 1e-12


@dataclass(frozen=True)
class LogModel:
    symbols: tuple[str, ...]
    Q: np.ndarray
    initial: np.ndarray
    C: np.ndarray
    ell: np.ndarray
    overrides: tuple[dict, ...] = ()

    def __post_init__(self):
        k = len(self.symbols)
        Q = np.asarray(self.Q, dtype=float)
        init = np.asarray(self.initial, dtype=float)
        C = np.asarray(self.C, dtype=float)
        ell = np.asarray(self.ell, dtype=float)
        if Q.shape != (k, k) or np.any(Q < 0) or np.abs(Q.sum(axis=1) - 1).max() > 1e-12:
            raise InvalidSpec("log transition matrix must be row-stochastic over the symbols")
        if init.shape != (k,) or np.any(init < 0) or abs(init.sum() - 1) > 1e-12:
            raise InvalidSpec("initial log distribution must be a probability vector")
        if C.shape != (k,) or ell.shape != (k,) or np.any(C < 0) or np.any(ell < 0):
            raise InvalidSpec("C and l must be nonnegative tables over the symbols")
        overrides = tuple(dict(o) for o in self.overrides) or tuple({} for _ in range(k))
        if len(overrides) != k:
            raise InvalidSpec("one override set per symbol is required")
        for name, v in (("Q", Q), ("initial", init), ("C", C), ("ell", ell)):
            object.__setattr__(self, name, v)
        object.__setattr__(self, "overrides", overrides)


@dataclass
class EpisodeChain:
    T: int
    symbols: tuple[str, ...]
    states: list[tuple[int, float, int]]  # (epoch, accumulated cost, symbol index)
    P: np.ndarray
    cost: np.ndarray  # expected episode cost per symbol
    cost_se: np.ndarray
    C: np.ndarray
    ell: np.ndarray
    initial: np.ndarray  # distribution over chain states at epoch 0
    bucket_width: float | None = None
    notes: list[str] = field(default_factory=list)

    @classmethod
    def from_costs(cls, log_model: LogModel, cost: Sequence[float], T: int,
                   cost_se: Sequence[float] | None = None, bucket_width: float | None = None) -> "EpisodeChain":
        """Build the finite chain from per-symbol expected episode costs."""
        cost = np.asarray(cost, dtype=float)
        k = len(log_model.symbols)
        if cost.shape != (k,) or not np.all(np.isfinite(cost)) or np.any(cost < 0):
            raise InvalidSpec("episode costs must be finite and nonnegative, one per symbol")
        if T < 1:
            raise InvalidSpec("the episode chain needs at least one decision epoch")

        def bucket(a: float) -> float:
            if bucket_width is None:
                return a
            return float(np.round(a / bucket_width) * bucket_width)

        index: dict = {}
        states: list = []
        edges: list = []

        def add(s):
            if s not in index:
                index[s] = len(states)
                states.append(s)
            return index[s]

        frontier = [add((0, 0.0, x)) for x in range(k)]
        for epoch in range(T):
            nxt = []
            for i in frontier:
                _, A, x = states[i]
                A2 = bucket(A + cost[x])
                for x2 in range(k):
                    if log_model.Q[x, x2] > 0:
                        j = add((epoch + 1, A2, x2))
                        edges.append((i, j, log_model.Q[x, x2]))
                        nxt.append(j)
            frontier = sorted(set(nxt))
        n = len(states)
        P = np.zeros((n, n))
        for i, j, p in edges:
            P[i, j] += p
        for i, (epoch, _, _) in enumerate(states):
            if epoch == T:
                P[i, i] = 1.0
        init = np.zeros(n)
        init[:k] = log_model.initial
        notes = []
        if bucket_width is not None:
            notes.append(f"accumulated cost bucketed to width {bucket_width}; payoffs condition on the bucket")
        else:
            notes.append("accumulated expected cost tracked exactly (no bucketing)")
        se = np.zeros(k) if cost_se is None else np.asarray(cost_se, dtype=float)
        return cls(T, tuple(log_model.symbols), states, P, cost, se, log_model.C.copy(),
                   log_model.ell.copy(), init, bucket_width, notes)

    @property
    def n(self) -> int:
        return len(self.states)

    def symbol_of(self) -> np.ndarray:
        return np.array([s[2] for s in self.states])

    def accumulated(self) -> np.ndarray:
        return np.array([s[1] for s in self.states])

    def epoch(self) -> np.ndarray:
        return np.array([s[0] for s in self.states])


def episode_costs(
    spec: AimgSpec, defender, attacker_factory, engine, log_model: LogModel, n_rollouts: int,
    rng: np.random.Generator, exact: bool = False, jobs: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Expected episode cost ``E[sum_h u_D]`` per log symbol, with standard errors."""
    if n_rollouts < 1:
        raise ValueError("n_rollouts must be at least 1")
    means, ses = [], []
    for ov in log_model.overrides:
        spec_x = spec.with_overrides(**ov)
        attacker = attacker_factory(spec_x)
        seed = child_seed(rng)
        if exact:
            means.append(evaluate_exact(spec_x, defender, attacker, engine).V_D)
            ses.append(0.0)
            continue
        batch = simulate_batch(spec_x, defender, attacker, engine, n_rollouts, seed, jobs=jobs)
        costs = np.array([t.total_u_D() for t in batch])
        means.append(float(costs.mean()))
        ses.append(float(costs.std(ddof=1) / np.sqrt(n_rollouts)) if n_rollouts > 1 else float("inf"))
    return np.array(means), np.array(ses)


def build_episode_chain(
    spec: AimgSpec, defender, attacker_factory, engine, T: int, log_model: LogModel, n_rollouts: int,
    rng: np.random.Generator, bucket_width: float | None = None, exact: bool = False, jobs: int = 1,
) -> EpisodeChain:
    cost, se = episode_costs(spec, defender, attacker_factory, engine, log_model, n_rollouts, rng, exact, jobs)
    return EpisodeChain.from_costs(log_model, cost, T, se, bucket_width)


def case_payoffs(chain: EpisodeChain) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = chain.symbol_of()
    A = chain.accumulated()
    phi = -A - chain.C[x]
    zeta = phi - chain.ell[x]
    psi = -A - chain.cost[x] - chain.ell[x]
    return phi, zeta, psi


@dataclass
class DominanceReport:
    holds: bool
    ell_positive: bool
    C_positive: bool
    cost_exceeds_C: bool
    failing_states: list[tuple]
    ordering: str


def check_dominance_condition(chain: EpisodeChain) -> DominanceReport:
    """Positivity of ``l`` and ``C`` plus ``c(x) > C(x)`` at every chain state."""
    x = chain.symbol_of()
    ell_pos = bool(np.all(chain.ell[x] > 0))
    C_pos = bool(np.all(chain.C[x] > 0))
    exceeds = chain.cost[x] > chain.C[x]
    failing = [chain.states[i] for i in np.flatnonzero(~exceeds)]
    phi, zeta, psi = case_payoffs(chain)
    ordering = classify_payoffs(phi, zeta, psi)
    return DominanceReport(ell_pos and C_pos and bool(exceeds.all()), ell_pos, C_pos, bool(exceeds.all()),
                           failing, ordering)


def stop_time_distribution(chain: EpisodeChain, stop: np.ndarray) -> np.ndarray:
    """Law of the first epoch at which a Markov rule stops, from the chain's initial law."""
    T = chain.T
    mass = chain.initial.copy()
    out = np.zeros(T + 1)
    for t in range(T + 1):
        s = stop[t]
        out[t] = mass[s].sum()
        mass = np.where(s, 0.0, mass) @ chain.P
    return out


@dataclass
class CaseReport:
    ordering: str
    dominance: DominanceReport
    solver: str | None
    message: str
    chain: EpisodeChain
    payoffs: tuple[np.ndarray, np.ndarray, np.ndarray]
    values: np.ndarray | None = None
    tau_stop: np.ndarray | None = None
    sigma_stop: np.ndarray | None = None
    verify_passed: bool | None = None
    verify_gain: float | None = None
    verify_method: str | None = None
    cutoff_distribution: np.ndarray | None = None

    def state_rows(self) -> list[dict]:
        phi, zeta, psi = self.payoffs
        rows = []
        for i, (epoch, A, x) in enumerate(self.chain.states):
            row = {"state": i, "epoch": epoch, "accumulated_cost": A, "symbol": self.chain.symbols[x],
                   "phi": phi[i], "zeta": zeta[i], "psi": psi[i]}
            if self.values is not None:
                row["value"] = self.values[epoch, i]
                row["defender_stops"] = int(self.tau_stop[epoch, i])
                row["attacker_stops"] = int(self.sigma_stop[epoch, i])
            rows.append(row)
        return rows


def solve_case(chain: EpisodeChain, verify_tol: float = 1e-9, verify_cap: int = 2**16) -> CaseReport:
    """Classify the constructed payoffs and dispatch to the matching solver."""
    phi, zeta, psi = case_payoffs(chain)
    dom = check_dominance_condition(chain)
    ordering = dom.ordering
    if ordering == MIXED:
        return CaseReport(ordering, dom, None, "mixed ordering, no solver dispatched", chain, (phi, zeta, psi))
    game = DynkinGameSpec(chain.P, phi, zeta, psi, chain.T)
    sol = solve_adc(game) if ordering == ADC else solve_ddc(game)
    rep = verify_dde(game, sol.tau_stop, sol.sigma_stop, verify_tol, method="auto", cap=verify_cap)
    return CaseReport(
        ordering, dom, "solve_adc" if ordering == ADC else "solve_ddc",
        f"ordering {ordering}; solved with {'solve_adc' if ordering == ADC else 'solve_ddc'}",
        chain, (phi, zeta, psi), sol.values, sol.tau_stop, sol.sigma_stop,
        rep.passed, rep.max_gain, rep.method, stop_time_distribution(chain, sol.tau_stop),
    )


def run_dd_ztd(
    spec: AimgSpec,
    defender,
    attacker_factory,
    engine,
    log_model: LogModel,
    T: int,
    n_rollouts: int,
    rng: np.random.Generator,
    bucket_width: float | None = None,
    exact_costs: bool = False,
    verify_tol: float = 1e-9,
    verify_cap: int = 2**16,
    jobs: int = 1,
) -> CaseReport:
    """Build the episode chain, check dominance, solve and verify."""
    chain = build_episode_chain(spec, defender, attacker_factory, engine, T, log_model, n_rollouts, rng,
                                bucket_width, exact_costs, jobs)
    report = solve_case(chain, verify_tol, verify_cap)
    log.info("case study: %s", report.message)
    return report
