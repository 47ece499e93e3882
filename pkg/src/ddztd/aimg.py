"""Asymmetric-information Markov game for lateral movement.

Types are ``0`` (legitimate user) and ``1`` (malicious attacker).  The defender picks a
set of edges on which to require multi-factor authentication (MFA); the user picks one
frontier edge.  A malicious user attempting an MFA-protected edge is always rejected, a
legitimate one passes with probability ``p_pass``.  An intrusion-detection sensor emits
one binary alarm per step with false-alarm rate ``alpha`` and detection rate ``beta``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from math import comb
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import CombinatorialBlowup, EmptyHistory, IllegalMove, InvalidSpec
from .netgraph import (
    Edge,
    NetworkGraph,
    ZtdState,
    apply_move,
    authentication_subgraph,
    frontier_edges,
    initial_state,
)

TYPES = (0, 1)
LEGITIMATE, MALICIOUS = TYPES

DefenseAction = frozenset  # frozenset[Edge]
NO_DEFENSE: frozenset = frozenset()


@dataclass(frozen=True)
class AimgSpec:
    graph: NetworkGraph
    horizon: int = 3
    prior: tuple[float, float] = (0.5, 0.5)
    breach_cost: float = 20.0  # M
    attacker_mfa_cost: float = 10.0  # M-hat
    reward: float = 5.0  # R
    p_pass: float = 0.9
    alpha: float = 0.1  # false-alarm rate
    beta: float = 0.7  # detection rate
    defense_budget: int = 1
    default_edge_cost: float = 1.0
    edge_costs: Mapping[Edge, float] = field(default_factory=dict)
    default_move_cost: float = 1.0
    move_costs: Mapping[Edge, float] = field(default_factory=dict)
    enum_limit: int = 12

    def __post_init__(self):
        prior = tuple(float(p) for p in self.prior)
        object.__setattr__(self, "prior", prior)
        if len(prior) != len(TYPES) or min(prior) < 0 or abs(sum(prior) - 1.0) > 1e-12:
            raise InvalidSpec(f"prior must be a distribution over {TYPES}, got {prior}")
        for name in ("p_pass", "alpha", "beta"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidSpec(f"{name} must lie in [0, 1], got {v}")
        if self.p_pass <= 0.0:
            raise InvalidSpec("p_pass must be positive")
        if self.beta < self.alpha:
            raise InvalidSpec("detector must be informative (beta >= alpha)")
        for name in ("breach_cost", "attacker_mfa_cost", "reward"):
            if getattr(self, name) < 0:
                raise InvalidSpec(f"{name} must be nonnegative")
        if self.horizon < 1:
            raise InvalidSpec("horizon must be at least 1")
        if self.defense_budget < 0:
            raise InvalidSpec("defense_budget must be nonnegative")
        if self.default_edge_cost < 0 or any(c < 0 for c in self.edge_costs.values()):
            raise InvalidSpec("edge costs must be nonnegative")

    def edge_cost(self, edge: Edge) -> float:
        return float(self.edge_costs.get(edge, self.default_edge_cost))

    def move_cost(self, edge: Edge | None) -> float:
        if edge is None:
            return 0.0
        return float(self.move_costs.get(edge, self.default_move_cost))

    def with_overrides(self, **overrides) -> "AimgSpec":
        return replace(self, **overrides)

    def initial_state(self) -> ZtdState:
        return initial_state(self.graph)


@dataclass(frozen=True)
class StepResult:
    next_state: ZtdState
    observation: int
    u_D: float
    u_A: float
    passed: bool


# ---------------------------------------------------------------------------
# action sets


def attacker_action_set(spec: AimgSpec, state: ZtdState) -> tuple[Edge, ...]:
    return frontier_edges(spec.graph, state.visited)


def attacker_moves(spec: AimgSpec, state: ZtdState) -> tuple[Edge | None, ...]:
    """Legal moves including the idle move ``None`` when the frontier is empty."""
    return attacker_action_set(spec, state) or (None,)


def defender_action_set(
    spec: AimgSpec, state: ZtdState, budget: int | None = None, full: bool = False
) -> Iterator[frozenset]:
    """Subsets of the authentication-graph edges with at most ``budget`` elements.

    Subsets come out by size, then lexicographically.  ``full=True`` ignores the
    budget and enumerates the whole power set.
    """
    edges = authentication_subgraph(spec.graph, state.visited).edges
    cap = len(edges) if full else min(len(edges), spec.defense_budget if budget is None else budget)
    if cap < 0:
        raise ValueError("budget must be nonnegative")
    if full and len(edges) > spec.enum_limit:
        raise CombinatorialBlowup(
            f"power set of {len(edges)} edges exceeds enumeration limit 2**{spec.enum_limit}"
        )
    for k in range(cap + 1):
        for combo in itertools.combinations(edges, k):
            yield frozenset(combo)


def count_defender_actions(n_edges: int, budget: int) -> int:
    return sum(comb(n_edges, k) for k in range(min(n_edges, budget) + 1))


def sorted_defense(a_D: frozenset) -> tuple[Edge, ...]:
    return tuple(sorted(a_D))


# ---------------------------------------------------------------------------
# kernels


def mfa_triggered(a_D: frozenset, a_A: Edge | None) -> bool:
    return a_A is not None and a_A in a_D


def pass_probability(spec: AimgSpec, a_D: frozenset, a_A: Edge | None, omega: int) -> float:
    if not mfa_triggered(a_D, a_A):
        return 1.0
    return spec.p_pass if omega == LEGITIMATE else 0.0


def successors(
    spec: AimgSpec, state: ZtdState, a_D: frozenset, a_A: Edge | None, omega: int
) -> list[tuple[ZtdState, float, bool]]:
    """``(next_state, probability, passed)`` triples with positive probability."""
    p = pass_probability(spec, a_D, a_A, omega)
    out = []
    if p > 0:
        out.append((apply_move(spec.graph, state, a_A, True), p, True))
    if p < 1:
        out.append((apply_move(spec.graph, state, a_A, False), 1.0 - p, False))
    return out


def transition_prob(
    spec: AimgSpec, state: ZtdState, a_D: frozenset, a_A: Edge | None, omega: int, next_state: ZtdState
) -> float:
    return sum(p for s, p, _ in successors(spec, state, a_D, a_A, omega) if s == next_state)


def observation_prob(spec: AimgSpec, o: int, omega: int) -> float:
    p_alarm = spec.beta if omega == MALICIOUS else spec.alpha
    return p_alarm if o == 1 else 1.0 - p_alarm


# ---------------------------------------------------------------------------
# utilities (costs; both players minimise)


def defense_cost(spec: AimgSpec, a_D: frozenset) -> float:
    return float(sum(spec.edge_cost(e) for e in sorted_defense(a_D)))


def defender_utility(spec: AimgSpec, state: ZtdState, a_D: frozenset, a_A: Edge | None, omega: int) -> float:
    cost = defense_cost(spec, a_D)
    if omega == LEGITIMATE:
        return cost
    return cost + spec.breach_cost * float(state.is_visited(spec.graph.target))


def attacker_utility(spec: AimgSpec, state: ZtdState, a_D: frozenset, a_A: Edge | None, omega: int) -> float:
    at_target = float(state.is_visited(spec.graph.target))
    base = spec.move_cost(a_A) - spec.reward * at_target
    if omega == LEGITIMATE:
        return base
    return base + spec.attacker_mfa_cost * float(mfa_triggered(a_D, a_A))


def expected_defender_utility(
    spec: AimgSpec, state: ZtdState, a_D: frozenset, a_A: Edge | None, belief: Sequence[float]
) -> float:
    return float(sum(belief[w] * defender_utility(spec, state, a_D, a_A, w) for w in TYPES))


# ---------------------------------------------------------------------------
# sampling


def step(
    spec: AimgSpec,
    state: ZtdState,
    a_D: frozenset,
    a_A: Edge | None,
    omega: int,
    rng: np.random.Generator,
) -> StepResult:
    """Play one stage.  Exactly two uniforms are drawn per call (MFA, then IDS)."""
    if a_A not in attacker_moves(spec, state):
        raise IllegalMove(f"{a_A!r} is not a legal attacker move")
    u_mfa, u_ids = rng.random(2)
    passed = bool(u_mfa < pass_probability(spec, a_D, a_A, omega))
    o = int(u_ids < observation_prob(spec, 1, omega))
    return StepResult(
        next_state=apply_move(spec.graph, state, a_A, passed),
        observation=o,
        u_D=defender_utility(spec, state, a_D, a_A, omega),
        u_A=attacker_utility(spec, state, a_D, a_A, omega),
        passed=passed,
    )


# ---------------------------------------------------------------------------
# information structures

ITEM_NAMES = ("state", "a_D", "a_A", "o")


@dataclass(frozen=True)
class InfoRecord:
    """One step of play plus which items each player gets to see.

    ``visible`` maps a player name to a subset of ``{"omega", "state", "a_D", "a_A", "o"}``.
    """

    time: int
    state: ZtdState | None
    a_D: frozenset | None
    a_A: Edge | None
    o: int | None
    visible: Mapping[str, frozenset[str]]


@dataclass(frozen=True)
class InfoClassification:
    asymmetry: str  # "one_sided_superior(<player>)", "double_sided" or "neither"
    incomplete: bool
    imperfect: bool


def _history_items(t: int) -> set[tuple]:
    items: set[tuple] = {("omega",)}
    for k in range(1, t + 1):
        items.add(("state", k))
        if k < t:
            items.update((name, k) for name in ("a_D", "a_A", "o"))
    return items


def _info_items(records: Sequence[InfoRecord], t: int, player: str) -> set[tuple]:
    allowed = _history_items(t)
    items: set[tuple] = set()
    for rec in records:
        if rec.time > t:
            continue
        vis = rec.visible.get(player, frozenset())
        if "omega" in vis:
            items.add(("omega",))
        items.update((name, rec.time) for name in ITEM_NAMES if name in vis)
    return items & allowed


def classify_information_structure(
    records: Sequence[InfoRecord], player_i: str, player_j: str
) -> InfoClassification:
    """Classify asymmetry between two players, and completeness/perfectness for ``player_i``."""
    if not records:
        raise EmptyHistory("classification needs at least one record")
    times = sorted({r.time for r in records})
    i_sup = j_sup = True
    double = False
    incomplete = True
    imperfect = False
    for t in times:
        I_i = _info_items(records, t, player_i)
        I_j = _info_items(records, t, player_j)
        i_sup &= I_j < I_i
        j_sup &= I_i < I_j
        double |= bool(I_i - I_j) and bool(I_j - I_i)
        incomplete &= ("omega",) not in I_i
        H = _history_items(t) - {("omega",)}
        imperfect |= (I_i - {("omega",)}) < H
    if i_sup:
        asym = f"one_sided_superior({player_i})"
    elif j_sup:
        asym = f"one_sided_superior({player_j})"
    elif double:
        asym = "double_sided"
    else:
        asym = "neither"
    return InfoClassification(asym, incomplete, imperfect)


DEFENDER_VIEW = frozenset({"state", "a_D", "a_A", "o"})
ATTACKER_VIEW = frozenset({"omega", "state", "a_A"})


def lateral_info_records(trajectory) -> list[InfoRecord]:
    """Information records for the lateral-movement game.

    The defender sees states, both actions and the IDS alarm but not the type; the
    attacker knows its type, the states and its own moves but not the alarm or the MFA set.
    """
    visible = {"D": DEFENDER_VIEW, "A": ATTACKER_VIEW}
    return [
        InfoRecord(r.time, r.state, r.a_D, r.a_A, r.o, visible)
        for r in trajectory.records
    ]
