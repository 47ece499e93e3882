"""Defender and attacker policies, rollouts, exact evaluation and learners.

Conventions
-----------
* Defender policies expose ``distribution(belief, state, spec) -> [(a_D, prob), ...]``.
* Attacker policies expose ``distribution(state, omega, history) -> [(move, prob), ...]``
  where ``history`` is the tuple of ``(state, move)`` pairs of earlier steps; this is
  exactly what the attacker observes (its type, the states and its own moves).
* Trust engines are the pure engines of :mod:`ddztd.trust`.

Both players minimise cumulative cost over the horizon.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .aimg import (
    LEGITIMATE,
    TYPES,
    AimgSpec,
    attacker_moves,
    attacker_utility,
    defender_action_set,
    defender_utility,
    expected_defender_utility,
    observation_prob,
    step,
    successors,
)
from .errors import EvaluationFailure, NonFiniteValue, StateSpaceTooLarge
from .netgraph import ZtdState, authentication_subgraph, frontier_edges, hop_distances
from .rng import child_seed, rng_stream

log = logging.getLogger(__name__)

COST_MODES = ("true", "belief")


def _sample_index(probs: Sequence[float], u: float) -> int:
    acc = 0.0
    for i, p in enumerate(probs):
        acc += p
        if u < acc:
            return i
    return len(probs) - 1


# ---------------------------------------------------------------------------
# defender policies

ACTION_LABELS = ("idle", "mfa_frontier", "mfa_all")


def labelled_action(spec: AimgSpec, state: ZtdState, label: str) -> frozenset:
    """Concrete MFA set for a named action, truncated to the defense budget."""
    if label == "idle":
        return frozenset()
    if label == "mfa_frontier":
        edges = frontier_edges(spec.graph, state.visited)
    elif label == "mfa_all":
        edges = authentication_subgraph(spec.graph, state.visited).edges
    else:
        raise ValueError(f"unknown action label {label!r}; expected one of {ACTION_LABELS}")
    return frozenset(edges[: spec.defense_budget])


class DefenderPolicy:
    def distribution(self, belief, state: ZtdState, spec: AimgSpec) -> list[tuple[frozenset, float]]:
        raise NotImplementedError

    def act(self, belief, state: ZtdState, spec: AimgSpec, rng: np.random.Generator) -> frozenset:
        """Sample an action; exactly one uniform is consumed per call."""
        dist = self.distribution(belief, state, spec)
        u = rng.random()
        return dist[_sample_index([p for _, p in dist], u)][0]


@dataclass(frozen=True)
class ThresholdPolicy(DefenderPolicy):
    """Cells of ``[0, 1]`` cut by sorted thresholds on the trust score ``b(0)``.

    Cell ``k`` holds trust scores in ``(tau_{k-1}, tau_k]``; the first cell includes 0.
    With one threshold the default labels make the low-trust cell the active defense.
    """

    thresholds: tuple[float, ...] = (0.5,)
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        th = tuple(float(t) for t in np.atleast_1d(self.thresholds))
        object.__setattr__(self, "thresholds", th)
        if any(not 0.0 <= t <= 1.0 for t in th):
            raise ValueError(f"thresholds must lie in [0, 1], got {th}")
        if any(a > b for a, b in zip(th, th[1:])):
            raise ValueError(f"thresholds must be nondecreasing, got {th}")
        labels = self.labels
        if labels is None:
            labels = ("mfa_frontier", "idle") if len(th) == 1 else ("mfa_all",) + ("mfa_frontier",) * (len(th) - 1) + ("idle",)
        labels = tuple(labels)
        if len(labels) != len(th) + 1:
            raise ValueError(f"{len(th)} thresholds need {len(th) + 1} labels, got {len(labels)}")
        object.__setattr__(self, "labels", labels)

    def cell(self, belief) -> int:
        return threshold_act(self, belief)

    def distribution(self, belief, state, spec):
        return [(labelled_action(spec, state, self.labels[self.cell(belief)]), 1.0)]


def threshold_act(policy: ThresholdPolicy, belief) -> int:
    """Cell index of ``b(0)``; a score equal to a threshold falls in the lower cell."""
    b0 = float(np.asarray(belief, dtype=float)[0])
    return int(np.searchsorted(policy.thresholds, b0, side="left"))


@dataclass(frozen=True)
class ConstantDefender(DefenderPolicy):
    label: str = "idle"

    def distribution(self, belief, state, spec):
        return [(labelled_action(spec, state, self.label), 1.0)]


def policy_features(belief, state: ZtdState, spec: AimgSpec) -> np.ndarray:
    """``(1, b(0), fraction of nodes visited)``."""
    return np.array([1.0, float(belief[0]), len(state.visited) / len(spec.graph.nodes)])


N_FEATURES = 3


class SoftmaxDefender(DefenderPolicy):
    """Softmax over the budget-capped enumeration of MFA sets.

    Action ``k`` of the enumeration at a state has logit ``W[k] . x`` with ``x`` from
    :func:`policy_features`.  ``W`` has one row per slot of the largest enumeration.
    """

    def __init__(self, weights: np.ndarray):
        self.weights = np.asarray(weights, dtype=float)
        if self.weights.ndim != 2 or self.weights.shape[1] != N_FEATURES:
            raise ValueError(f"weights must have shape (n_actions, {N_FEATURES})")

    @classmethod
    def zeros(cls, spec: AimgSpec) -> "SoftmaxDefender":
        return cls(np.zeros((max_defender_actions(spec), N_FEATURES)))

    def _actions_probs(self, belief, state, spec):
        actions = list(defender_action_set(spec, state))
        if len(actions) > self.weights.shape[0]:
            raise ValueError(f"{len(actions)} actions but only {self.weights.shape[0]} weight rows")
        x = policy_features(belief, state, spec)
        z = self.weights[: len(actions)] @ x
        e = np.exp(z - z.max())
        return actions, e / e.sum(), x

    def distribution(self, belief, state, spec):
        actions, probs, _ = self._actions_probs(belief, state, spec)
        return list(zip(actions, probs.tolist()))

    def grad_log_prob(self, belief, state, spec, a_D) -> np.ndarray:
        actions, probs, x = self._actions_probs(belief, state, spec)
        k = actions.index(a_D)
        g = np.zeros_like(self.weights)
        coef = -probs
        coef[k] += 1.0
        g[: len(actions)] = np.outer(coef, x)
        return g


def max_defender_actions(spec: AimgSpec) -> int:
    """Size of the largest budget-capped MFA enumeration over reachable visited sets."""
    from .aimg import count_defender_actions

    return count_defender_actions(len(spec.graph.edges), spec.defense_budget)


# ---------------------------------------------------------------------------
# attacker policies


class AttackerPolicy:
    def distribution(self, state: ZtdState, omega: int, history: tuple = ()) -> list[tuple]:
        raise NotImplementedError

    def prob(self, a_A, state, omega, history=()) -> float:
        return float(sum(p for m, p in self.distribution(state, omega, history) if m == a_A))

    def act(self, state, omega, history, rng: np.random.Generator):
        """Sample a move; exactly one uniform is consumed per call."""
        dist = self.distribution(state, omega, history)
        u = rng.random()
        return dist[_sample_index([p for _, p in dist], u)][0]


class UniformAttacker(AttackerPolicy):
    def __init__(self, spec: AimgSpec):
        self.spec = spec

    def distribution(self, state, omega, history=()):
        moves = attacker_moves(self.spec, state)
        return [(m, 1.0 / len(moves)) for m in moves]


class ShortestPathAttacker(AttackerPolicy):
    """Default user model.

    The malicious type follows a cheapest route to the target (move costs as edge
    weights, ties to the lexicographically smallest edge).  The legitimate type walks
    uniformly over frontier edges that can still reach the target.
    """

    def __init__(self, spec: AimgSpec, legitimate: str = "random_walk"):
        if legitimate not in ("random_walk", "shortest"):
            raise ValueError("legitimate must be 'random_walk' or 'shortest'")
        self.spec = spec
        self.legitimate = legitimate
        weights = {e: spec.move_cost(e) for e in spec.graph.edges}
        self.dist = hop_distances(spec.graph, weights)

    def _score(self, e) -> float:
        return self.spec.move_cost(e) + self.dist[e[1]]

    def distribution(self, state, omega, history=()):
        moves = attacker_moves(self.spec, state)
        if moves == (None,):
            return [(None, 1.0)]
        if omega == LEGITIMATE and self.legitimate == "random_walk":
            useful = [m for m in moves if np.isfinite(self.dist[m[1]])] or list(moves)
            return [(m, 1.0 / len(useful)) for m in useful]
        best = min(moves, key=lambda e: (self._score(e), e))
        return [(best, 1.0)]


class TabularAttacker(AttackerPolicy):
    """Deterministic lookup ``(omega, history, state) -> move`` with a fallback policy."""

    def __init__(self, table: dict, fallback: AttackerPolicy | None = None):
        self.table = dict(table)
        self.fallback = fallback

    def distribution(self, state, omega, history=()):
        key = (omega, tuple(history), state)
        if key in self.table:
            return [(self.table[key], 1.0)]
        if self.fallback is None:
            raise KeyError(f"no tabulated move for type {omega} at {state}")
        return self.fallback.distribution(state, omega, history)


# ---------------------------------------------------------------------------
# rollouts


@dataclass(frozen=True)
class StepRecord:
    time: int
    state: ZtdState
    belief: tuple[float, ...]
    a_D: frozenset
    a_A: object
    o: int
    u_D: float
    u_A: float
    u_D_belief: float
    next_state: ZtdState
    passed: bool


@dataclass
class Trajectory:
    omega: int
    seed: int | None
    records: list[StepRecord] = field(default_factory=list)

    def total_u_D(self, cost_mode: str = "true") -> float:
        if cost_mode == "true":
            return float(sum(r.u_D for r in self.records))
        if cost_mode == "belief":
            return float(sum(r.u_D_belief for r in self.records))
        raise ValueError(f"cost_mode must be one of {COST_MODES}")

    def total_u_A(self) -> float:
        return float(sum(r.u_A for r in self.records))

    def attacker_history(self, t: int) -> tuple:
        """``(state, move)`` pairs of the steps before step ``t`` (1-based)."""
        return tuple((r.state, r.a_A) for r in self.records[: t - 1])


def sample_type(spec: AimgSpec, rng: np.random.Generator) -> int:
    return _sample_index(spec.prior, rng.random())


def rollout(
    spec: AimgSpec,
    defender: DefenderPolicy,
    attacker: AttackerPolicy,
    omega: int,
    engine,
    rng: np.random.Generator,
    seed: int | None = None,
) -> Trajectory:
    """Play one episode of ``spec.horizon`` steps, tracking the defender's belief.

    Each step consumes four uniforms: defender action, attacker move, MFA outcome and
    IDS alarm, in that order.
    """
    traj = Trajectory(omega=omega, seed=seed)
    state = spec.initial_state()
    estate = engine.reset(spec)
    history: tuple = ()
    for _ in range(spec.horizon):
        b = engine.belief(estate)
        a_D = defender.act(b, state, spec, rng)
        a_A = attacker.act(state, omega, history, rng)
        res = step(spec, state, a_D, a_A, omega, rng)
        traj.records.append(
            StepRecord(
                time=state.time,
                state=state,
                belief=tuple(float(x) for x in b),
                a_D=a_D,
                a_A=a_A,
                o=res.observation,
                u_D=res.u_D,
                u_A=res.u_A,
                u_D_belief=expected_defender_utility(spec, state, a_D, a_A, b),
                next_state=res.next_state,
                passed=res.passed,
            )
        )
        estate = engine.update(estate, spec, state, a_D, a_A, res.observation, res.next_state, history)
        history = history + ((state, a_A),)
        state = res.next_state
    return traj


def _rollout_chunk(args) -> list[Trajectory]:
    spec, defender, attacker, engine, seed, ids, omega = args
    out = []
    for k in ids:
        rng = rng_stream(seed, k)
        w = sample_type(spec, rng) if omega is None else omega
        out.append(rollout(spec, defender, attacker, w, engine, rng, seed=k))
    return out


def simulate_batch(
    spec: AimgSpec,
    defender: DefenderPolicy,
    attacker: AttackerPolicy,
    engine,
    n: int,
    seed: int,
    omega: int | None = None,
    jobs: int = 1,
) -> list[Trajectory]:
    """``n`` rollouts; rollout ``k`` draws everything from substream ``k`` of ``seed``.

    The type is drawn from the prior (first uniform of the substream) unless fixed.
    Results do not depend on ``jobs``.
    """
    ids = list(range(n))
    if jobs <= 1 or n < 2:
        return _rollout_chunk((spec, defender, attacker, engine, seed, ids, omega))
    chunks = [ids[i::jobs] for i in range(jobs)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        parts = list(pool.map(_rollout_chunk, [(spec, defender, attacker, engine, seed, c, omega) for c in chunks]))
    by_id = {t.seed: t for part in parts for t in part}
    return [by_id[k] for k in ids]


def replay_beliefs(spec: AimgSpec, traj: Trajectory, engine) -> list[np.ndarray]:
    """Recompute the belief stream of a trajectory from its records."""
    estate = engine.reset(spec)
    out = []
    history: tuple = ()
    for r in traj.records:
        out.append(engine.belief(estate))
        estate = engine.update(estate, spec, r.state, r.a_D, r.a_A, r.o, r.next_state, history)
        history = history + ((r.state, r.a_A),)
    return out


# ---------------------------------------------------------------------------
# exact evaluation by game-tree enumeration


@dataclass(frozen=True)
class Evaluation:
    V_D: float  # prior-weighted defender cost
    V_D_by_type: np.ndarray
    V_A_by_type: np.ndarray


def evaluate_exact(
    spec: AimgSpec,
    defender: DefenderPolicy,
    attacker: AttackerPolicy,
    engine,
    cost_mode: str = "true",
    max_nodes: int = 2_000_000,
) -> Evaluation:
    """Expected cumulative costs by enumerating every (action, transition, alarm) branch."""
    if cost_mode not in COST_MODES:
        raise ValueError(f"cost_mode must be one of {COST_MODES}")
    counter = [0]

    def go(w, state, estate, history, depth):
        if depth == spec.horizon:
            return 0.0, 0.0
        counter[0] += 1
        if counter[0] > max_nodes:
            raise StateSpaceTooLarge(f"game tree exceeds {max_nodes} nodes")
        b = engine.belief(estate)
        vd = va = 0.0
        for a_D, pD in defender.distribution(b, state, spec):
            if pD == 0:
                continue
            for a_A, pA in attacker.distribution(state, w, history):
                if pA == 0:
                    continue
                p = pD * pA
                if cost_mode == "true":
                    uD = defender_utility(spec, state, a_D, a_A, w)
                else:
                    uD = expected_defender_utility(spec, state, a_D, a_A, b)
                vd += p * uD
                va += p * attacker_utility(spec, state, a_D, a_A, w)
                h2 = history + ((state, a_A),)
                for s2, ps, _ in successors(spec, state, a_D, a_A, w):
                    for o in (0, 1):
                        po = observation_prob(spec, o, w)
                        if po == 0:
                            continue
                        e2 = engine.update(estate, spec, state, a_D, a_A, o, s2, history)
                        cd, ca = go(w, s2, e2, h2, depth + 1)
                        vd += p * ps * po * cd
                        va += p * ps * po * ca
        return vd, va

    s0 = spec.initial_state()
    e0 = engine.reset(spec)
    vals = [go(w, s0, e0, (), 0) for w in TYPES]
    vd = np.array([v[0] for v in vals])
    va = np.array([v[1] for v in vals])
    return Evaluation(float(np.dot(spec.prior, vd)), vd, va)


# ---------------------------------------------------------------------------
# policy gradient


def policy_gradient_estimate(
    trajectories: Sequence[Trajectory],
    policy: SoftmaxDefender,
    spec: AimgSpec,
    cost_mode: str = "true",
    baseline: bool = False,
) -> np.ndarray:
    """``(1/K) sum_k [sum_t grad log pi(a_D^t | b^t, s^t)] * u_D(l_k)``.

    ``baseline=True`` subtracts the batch-mean return (not part of the plain estimator).
    """
    if not trajectories:
        raise ValueError("need at least one trajectory")
    returns = np.array([t.total_u_D(cost_mode) for t in trajectories])
    if baseline:
        returns = returns - returns.mean()
    g = np.zeros_like(policy.weights)
    for traj, ret in zip(trajectories, returns):
        if ret == 0:
            continue
        score = np.zeros_like(policy.weights)
        for r in traj.records:
            score += policy.grad_log_prob(np.asarray(r.belief), r.state, spec, r.a_D)
        g += score * ret
    return g / len(trajectories)


@dataclass(frozen=True)
class PgConfig:
    iterations: int = 50
    batch: int = 64
    lr: float = 0.05
    tol: float = 1e-3
    seed: int = 0
    cost_mode: str = "true"
    baseline: bool = False
    attacker_mode: str = "fixed"  # or "best_response"
    br_every: int = 10


@dataclass
class PgResult:
    policy: SoftmaxDefender
    curve: list[dict]
    converged: bool
    attacker: AttackerPolicy


def train_policy_gradient(
    spec: AimgSpec,
    attacker: AttackerPolicy,
    engine,
    config: PgConfig,
    init: SoftmaxDefender | None = None,
) -> PgResult:
    """Plain stochastic gradient descent on the defender's expected cumulative cost.

    ``converged`` reports first-order stationarity: the last batch gradient norm fell
    below ``tol``.
    """
    if config.attacker_mode not in ("fixed", "best_response"):
        raise ValueError("attacker_mode must be 'fixed' or 'best_response'")
    policy = SoftmaxDefender((init or SoftmaxDefender.zeros(spec)).weights.copy())
    master = rng_stream(config.seed, 31)
    curve: list[dict] = []
    converged = False
    for it in range(config.iterations):
        if config.attacker_mode == "best_response" and it % config.br_every == 0:
            attacker = attacker_best_response(spec, policy, engine).policy
        batch = simulate_batch(spec, policy, attacker, engine, config.batch, child_seed(master))
        g = policy_gradient_estimate(batch, policy, spec, config.cost_mode, config.baseline)
        v = float(np.mean([t.total_u_D(config.cost_mode) for t in batch]))
        gnorm = float(np.linalg.norm(g))
        if not (np.isfinite(v) and np.isfinite(gnorm)):
            raise NonFiniteValue(f"iteration {it}: value {v}, gradient norm {gnorm}")
        curve.append({"iteration": it, "V_D": v, "grad_norm": gnorm})
        if gnorm < config.tol:
            converged = True
            break
        policy = SoftmaxDefender(policy.weights - config.lr * g)
    return PgResult(policy, curve, converged, attacker)


# ---------------------------------------------------------------------------
# SPSA


def spsa_gradient(
    objective: Callable[[np.ndarray | float, np.random.Generator], float],
    tau,
    c_k: float,
    rng: np.random.Generator,
):
    """Two-sided simultaneous-perturbation estimate with Rademacher directions.

    Both evaluations receive generators built from the same seed (common random
    numbers).  The objective is called as ``objective(x, rng)``.
    """
    if not c_k > 0:
        raise ValueError("perturbation size must be positive")
    scalar = np.ndim(tau) == 0
    x = np.atleast_1d(np.asarray(tau, dtype=float))
    delta = rng.integers(0, 2, size=x.shape) * 2.0 - 1.0
    crn = child_seed(rng)
    try:
        f_plus = float(objective(x[0] + c_k * delta[0] if scalar else x + c_k * delta, rng_stream(crn, 0)))
        f_minus = float(objective(x[0] - c_k * delta[0] if scalar else x - c_k * delta, rng_stream(crn, 0)))
    except (ValueError, ArithmeticError, StateSpaceTooLarge) as exc:
        raise EvaluationFailure(f"objective failed at perturbed point: {exc}") from exc
    if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
        raise EvaluationFailure(f"objective returned non-finite values ({f_plus}, {f_minus})")
    g = (f_plus - f_minus) / (2.0 * c_k * delta)
    return float(g[0]) if scalar else g


class ThresholdObjective:
    """``tau -> V_D`` of a threshold policy; perturbed points are clipped to ``[0, 1]``.

    ``exact=True`` enumerates the game tree, otherwise ``n_eval`` rollouts are drawn
    from a seed taken from the supplied generator.
    """

    def __init__(self, spec: AimgSpec, attacker: AttackerPolicy, engine, labels=None,
                 n_eval: int = 200, exact: bool = False, cost_mode: str = "true"):
        self.spec = spec
        self.attacker = attacker
        self.engine = engine
        self.labels = labels
        self.n_eval = n_eval
        self.exact = exact
        self.cost_mode = cost_mode
        self._cache: dict = {}

    def policy(self, tau) -> ThresholdPolicy:
        th = np.sort(np.clip(np.atleast_1d(np.asarray(tau, dtype=float)), 0.0, 1.0))
        return ThresholdPolicy(tuple(th.tolist()), self.labels)

    def __call__(self, tau, rng: np.random.Generator | None = None) -> float:
        pol = self.policy(tau)
        if self.exact:
            if pol not in self._cache:
                self._cache[pol] = evaluate_exact(self.spec, pol, self.attacker, self.engine, self.cost_mode).V_D
            return self._cache[pol]
        if rng is None:
            raise ValueError("Monte-Carlo objective needs a generator")
        batch = simulate_batch(self.spec, pol, self.attacker, self.engine, self.n_eval, child_seed(rng))
        return float(np.mean([t.total_u_D(self.cost_mode) for t in batch]))


@dataclass(frozen=True)
class SpsaConfig:
    iterations: int = 60
    a: float = 0.05
    A: float = 5.0
    c: float = 0.1
    alpha: float = 0.602
    gamma: float = 0.101
    tau0: tuple[float, ...] = (0.5,)
    n_eval: int = 200
    exact: bool = False
    cost_mode: str = "true"
    labels: tuple[str, ...] | None = None
    seed: int = 0

    def gains(self, k: int) -> tuple[float, float]:
        """``(a_k, c_k)`` for iteration ``k >= 1``."""
        return self.a / (k + self.A) ** self.alpha, self.c / k ** self.gamma


@dataclass
class SpsaResult:
    policy: ThresholdPolicy
    curve: list[dict]


def spsa_minimize(objective, x0, config: SpsaConfig, rng: np.random.Generator,
                  lower=0.0, upper=1.0, sort: bool = True) -> tuple[np.ndarray, list[dict]]:
    """Projected SPSA descent; the curve records the mean of the two evaluations."""
    x = np.clip(np.atleast_1d(np.asarray(x0, dtype=float)), lower, upper)
    curve = []
    for k in range(1, config.iterations + 1):
        a_k, c_k = config.gains(k)
        values = []

        def tracked(z, r):
            v = objective(z, r)
            values.append(v)
            return v

        g = spsa_gradient(tracked, x, c_k, rng)
        x = np.clip(x - a_k * g, lower, upper)
        if sort:
            x = np.sort(x)
        curve.append({"iteration": k, **{f"x{i}": float(v) for i, v in enumerate(x)},
                      "value": float(np.mean(values)), "grad_norm": float(np.linalg.norm(g))})
    return x, curve


def train_threshold_spsa(spec: AimgSpec, attacker: AttackerPolicy, engine, config: SpsaConfig) -> SpsaResult:
    """Learn thresholds by projected SPSA on ``V_D``; iterates stay in ``[0, 1]``."""
    obj = ThresholdObjective(spec, attacker, engine, config.labels, config.n_eval, config.exact, config.cost_mode)
    x, curve = spsa_minimize(obj, config.tau0, config, rng_stream(config.seed, 41))
    for row in curve:
        row["tau"] = row.pop("x0")
    return SpsaResult(obj.policy(x), curve)


# ---------------------------------------------------------------------------
# attacker best response


@dataclass
class BestResponse:
    policy: TabularAttacker
    value: np.ndarray  # optimal expected cumulative cost per type
    nodes: int


def attacker_best_response(
    spec: AimgSpec,
    defender: DefenderPolicy,
    engine,
    max_nodes: int = 200_000,
    tie_tol: float = 1e-12,
) -> BestResponse:
    """Exact best response by backward induction over the attacker's observable histories.

    The attacker sees its type, the states and its own moves; the defender's belief is
    hidden, so each decision node carries the weighted set of engine states consistent
    with what the attacker saw.  Ties go to the lexicographically smallest move (the
    idle move only exists when it is the sole option).
    """
    table: dict = {}
    counter = [0]

    def solve(w, state, history, particles):
        # returns sum over particles/futures of weight * cost
        if state.time > spec.horizon:
            return 0.0
        counter[0] += 1
        if counter[0] > max_nodes:
            raise StateSpaceTooLarge(f"attacker decision tree exceeds {max_nodes} nodes")
        best_move, best_val = None, np.inf
        for a_A in attacker_moves(spec, state):
            total = 0.0
            children: dict[ZtdState, dict] = {}
            for estate, weight in particles.items():
                b = engine.belief(estate)
                for a_D, pD in defender.distribution(b, state, spec):
                    if pD == 0:
                        continue
                    total += weight * pD * attacker_utility(spec, state, a_D, a_A, w)
                    for s2, ps, _ in successors(spec, state, a_D, a_A, w):
                        for o in (0, 1):
                            po = observation_prob(spec, o, w)
                            if po == 0:
                                continue
                            e2 = engine.update(estate, spec, state, a_D, a_A, o, s2, history)
                            bucket = children.setdefault(s2, {})
                            bucket[e2] = bucket.get(e2, 0.0) + weight * pD * ps * po
            h2 = history + ((state, a_A),)
            for s2 in sorted(children, key=lambda s: (s.key, s.time)):
                total += solve(w, s2, h2, children[s2])
            scale = max(1.0, abs(best_val)) if np.isfinite(best_val) else 1.0
            if total < best_val - tie_tol * scale:
                best_move, best_val = a_A, total
        table[(w, history, state)] = best_move
        return best_val

    s0 = spec.initial_state()
    e0 = engine.reset(spec)
    value = np.array([solve(w, s0, (), {e0: 1.0}) for w in TYPES])
    return BestResponse(TabularAttacker(table), value, counter[0])


def enumerate_attacker_policies(spec: AimgSpec, max_policies: int = 100_000):
    """Every deterministic history-dependent attacker policy (desk-scale oracle).

    Yields :class:`TabularAttacker` objects covering all nodes reachable under some
    defender behaviour.
    """
    import itertools

    def nodes_for(w):
        out = []

        def walk(state, history):
            if state.time > spec.horizon:
                return
            out.append((state, history))
            for a_A in attacker_moves(spec, state):
                seen = set()
                for a_D in defender_action_set(spec, state, full=True):
                    for s2, _, _ in successors(spec, state, a_D, a_A, w):
                        if s2 not in seen:
                            seen.add(s2)
                            walk(s2, history + ((state, a_A),))

        walk(spec.initial_state(), ())
        return out

    per_type = []
    for w in TYPES:
        nodes = nodes_for(w)
        choices = [attacker_moves(spec, s) for s, _ in nodes]
        per_type.append((w, nodes, choices))
    total = 1
    for _, _, ch in per_type:
        for c in ch:
            total *= len(c)
    if total > max_policies:
        raise StateSpaceTooLarge(f"{total} attacker policies exceed the cap {max_policies}")
    grids = [list(itertools.product(*ch)) for _, _, ch in per_type]
    for combo in itertools.product(*grids):
        table = {}
        for (w, nodes, _), picks in zip(per_type, combo):
            for (s, h), m in zip(nodes, picks):
                table[(w, h, s)] = m
        yield TabularAttacker(table)
