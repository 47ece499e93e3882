"""Stage-game Nash solver, belief-value iteration and a PBNE verifier.

Nodes of the game tree are identified by the state history ``h = (s^1, ..., s^t)``,
which is the public part of the defender's information used by the belief iteration.
Values are stored per type: ``V_D[h][w]`` is the defender's expected cost-to-go at ``h``
when the user is of type ``w``; the defender weighs them with its belief ``b(h)``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .aimg import (
    TYPES,
    AimgSpec,
    attacker_moves,
    attacker_utility,
    defender_action_set,
    defender_utility,
    successors,
)
from .errors import NoEquilibriumFound, StateSpaceTooLarge
from .trust import bte_update

log = logging.getLogger(__name__)

BR_EPS = 1e-9


# ---------------------------------------------------------------------------
# bimatrix games (costs: both players minimise)


@dataclass(frozen=True)
class StageSolution:
    x: np.ndarray  # row (defender) mixed strategy
    y: np.ndarray  # column (attacker) mixed strategy
    value_row: float
    value_col: float
    degenerate: bool = False


def _is_equilibrium(D, A, x, y, eps) -> bool:
    vr = x @ D @ y
    vc = x @ A @ y
    return bool((D @ y).min() >= vr - eps and (x @ A).min() >= vc - eps)


def _solve_indifference(M: np.ndarray) -> np.ndarray | None:
    """Mixed strategy over the columns of ``M`` (k x k) equalising every row."""
    k = M.shape[0]
    lhs = np.zeros((k + 1, k + 1))
    lhs[:k, :k] = M
    lhs[:k, k] = -1.0
    lhs[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    try:
        sol = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(sol)):
        return None
    return sol[:k]


def _support_lp(M: np.ndarray, rows: tuple, cols: tuple) -> np.ndarray | None:
    """Column strategy on ``cols`` making rows in ``rows`` tied-minimal for ``M``."""
    m, n = M.shape
    # variables: y (n) then v
    c = np.zeros(n + 1)
    A_eq, b_eq, A_ub, b_ub = [], [], [], []
    for i in range(m):
        row = np.append(M[i], -1.0)
        if i in rows:
            A_eq.append(row)
            b_eq.append(0.0)
        else:
            A_ub.append(-row)  # M[i] y >= v
            b_ub.append(0.0)
    A_eq.append(np.append(np.ones(n), 0.0))
    b_eq.append(1.0)
    bounds = [(0.0, None) if j in cols else (0.0, 0.0) for j in range(n)] + [(None, None)]
    res = linprog(c, A_ub=np.array(A_ub) if A_ub else None, b_ub=np.array(b_ub) if b_ub else None,
                  A_eq=np.array(A_eq), b_eq=np.array(b_eq), bounds=bounds, method="highs")
    if res.status != 0:
        return None
    y = np.clip(res.x[:n], 0.0, None)
    return y / y.sum()


def stage_bayes_nash(D: np.ndarray, A: np.ndarray, eps: float = BR_EPS) -> StageSolution:
    """One Nash equilibrium of the cost bimatrix ``(D, A)``.

    Search order: pure profiles, then equal-size supports solved by indifference, both
    by support size and then lexicographically; if none qualifies (degenerate game),
    support pairs of any sizes are tried with a linear feasibility program and the
    result is flagged ``degenerate``.
    """
    D = np.asarray(D, dtype=float)
    A = np.asarray(A, dtype=float)
    if D.shape != A.shape or D.ndim != 2 or D.size == 0:
        raise ValueError(f"payoff matrices must share a nonempty 2-d shape, got {D.shape} and {A.shape}")
    if not (np.all(np.isfinite(D)) and np.all(np.isfinite(A))):
        raise ValueError("payoff matrices must be finite")
    m, n = D.shape
    tol = eps * max(1.0, np.abs(D).max(), np.abs(A).max())

    for i in range(m):
        for j in range(n):
            if D[i, j] <= D[:, j].min() + tol and A[i, j] <= A[i, :].min() + tol:
                x = np.zeros(m)
                y = np.zeros(n)
                x[i] = y[j] = 1.0
                return StageSolution(x, y, float(D[i, j]), float(A[i, j]))

    for k in range(2, min(m, n) + 1):
        for I in itertools.combinations(range(m), k):
            for J in itertools.combinations(range(n), k):
                ys = _solve_indifference(D[np.ix_(I, J)])
                xs = _solve_indifference(A[np.ix_(I, J)].T)
                if ys is None or xs is None or ys.min() < -tol or xs.min() < -tol:
                    continue
                x = np.zeros(m)
                y = np.zeros(n)
                x[list(I)] = np.clip(xs, 0.0, None)
                y[list(J)] = np.clip(ys, 0.0, None)
                x /= x.sum()
                y /= y.sum()
                if _is_equilibrium(D, A, x, y, tol):
                    return StageSolution(x, y, float(x @ D @ y), float(x @ A @ y))

    pairs = [(I, J) for a in range(1, m + 1) for b in range(1, n + 1)
             for I in itertools.combinations(range(m), a) for J in itertools.combinations(range(n), b)]
    pairs.sort(key=lambda p: (len(p[0]) + len(p[1]), max(len(p[0]), len(p[1])), p))
    for I, J in pairs:
        y = _support_lp(D, I, J)
        if y is None:
            continue
        x = _support_lp(A.T, J, I)
        if x is None:
            continue
        if _is_equilibrium(D, A, x, y, tol):
            log.debug("degenerate stage game solved on supports %s/%s", I, J)
            return StageSolution(x, y, float(x @ D @ y), float(x @ A @ y), degenerate=True)
    raise NoEquilibriumFound(f"no equilibrium found for a {m}x{n} game (solver bug)")


def best_response_gaps(D, A, sol: StageSolution) -> tuple[float, float]:
    """How much each player could gain by a pure deviation (nonnegative up to rounding)."""
    D = np.asarray(D, dtype=float)
    A = np.asarray(A, dtype=float)
    return float(sol.x @ D @ sol.y - (D @ sol.y).min()), float(sol.x @ A @ sol.y - (sol.x @ A).min())


# ---------------------------------------------------------------------------
# game tree over state histories


History = tuple  # tuple of ZtdState


def history_tree(spec: AimgSpec, max_nodes: int = 50_000) -> dict[int, list[History]]:
    """Every state history reachable under some actions, grouped by length."""
    root = (spec.initial_state(),)
    levels = {1: [root]}
    count = 1
    for t in range(1, spec.horizon):
        nxt = []
        for h in levels[t]:
            for s2 in _child_states(spec, h[-1]):
                nxt.append(h + (s2,))
        count += len(nxt)
        if count > max_nodes:
            raise StateSpaceTooLarge(f"history tree exceeds {max_nodes} nodes")
        levels[t + 1] = nxt
    return levels


def _child_states(spec: AimgSpec, s) -> list:
    seen = []
    for a_D in defender_action_set(spec, s):
        for a_A in attacker_moves(spec, s):
            for w in TYPES:
                for s2, _, _ in successors(spec, s, a_D, a_A, w):
                    if s2 not in seen:
                        seen.append(s2)
    return sorted(seen, key=lambda z: (z.key, z.time))


def _attacker_profiles(moves: tuple) -> list[tuple]:
    """Type-contingent pure strategies: one move per type."""
    return list(itertools.product(moves, repeat=len(TYPES)))


def _transition_under(spec, s, pi_D, pi_A_w, w) -> dict:
    """``P_pi(s' | s, w)`` as a dict."""
    out: dict = {}
    for a_D, pD in pi_D:
        for a_A, pA in pi_A_w:
            if pD * pA == 0:
                continue
            for s2, p, _ in successors(spec, s, a_D, a_A, w):
                out[s2] = out.get(s2, 0.0) + pD * pA * p
    return out


@dataclass
class BviResult:
    V_D: dict  # h -> array over types
    V_A: dict  # h -> array over types
    pi_D: dict  # h -> [(a_D, prob)]
    pi_A: dict  # (h, w) -> [(move, prob)]
    beliefs: dict  # h -> belief array
    converged: bool
    iterations: int
    deltas: list[dict] = field(default_factory=list)
    degenerate_stages: int = 0

    def value(self, spec: AimgSpec) -> tuple[float, np.ndarray]:
        root = (spec.initial_state(),)
        return float(np.dot(self.beliefs[root], self.V_D[root])), self.V_A[root].copy()


def _backward_pass(spec, levels, beliefs):
    V_D, V_A, pi_D, pi_A = {}, {}, {}, {}
    degenerate = 0
    nT = len(TYPES)
    for t in range(spec.horizon, 0, -1):
        for h in levels[t]:
            s = h[-1]
            d_actions = list(defender_action_set(spec, s))
            moves = attacker_moves(spec, s)
            profiles = _attacker_profiles(moves)
            b = beliefs[h]
            # per-type cost-to-go of each (a_D, move)
            qD = np.zeros((nT, len(d_actions), len(moves)))
            qA = np.zeros_like(qD)
            for w in TYPES:
                for i, a_D in enumerate(d_actions):
                    for j, a_A in enumerate(moves):
                        vd = defender_utility(spec, s, a_D, a_A, w)
                        va = attacker_utility(spec, s, a_D, a_A, w)
                        if t < spec.horizon:
                            for s2, p, _ in successors(spec, s, a_D, a_A, w):
                                vd += p * V_D[h + (s2,)][w]
                                va += p * V_A[h + (s2,)][w]
                        qD[w, i, j] = vd
                        qA[w, i, j] = va
            col = {m: j for j, m in enumerate(moves)}
            D = np.zeros((len(d_actions), len(profiles)))
            A = np.zeros_like(D)
            for k, prof in enumerate(profiles):
                for w, m in zip(TYPES, prof):
                    D[:, k] += b[w] * qD[w, :, col[m]]
                    A[:, k] += qA[w, :, col[m]] / nT
            sol = stage_bayes_nash(D, A)
            degenerate += int(sol.degenerate)
            pi_D[h] = [(a, float(p)) for a, p in zip(d_actions, sol.x)]
            vD = np.zeros(nT)
            vA = np.zeros(nT)
            for w in TYPES:
                marg = np.zeros(len(moves))
                for k, prof in enumerate(profiles):
                    marg[col[prof[w]]] += sol.y[k]
                pi_A[(h, w)] = [(m, float(p)) for m, p in zip(moves, marg)]
                vD[w] = sol.x @ qD[w] @ marg
                vA[w] = sol.x @ qA[w] @ marg
            V_D[h] = vD
            V_A[h] = vA
    return V_D, V_A, pi_D, pi_A, degenerate


def belief_pass(spec, levels, pi_D, pi_A, old_beliefs) -> dict:
    """Forward Bayes over state histories; unreachable children keep their old belief."""
    beliefs = {levels[1][0]: np.asarray(spec.prior, dtype=float)}
    for t in range(1, spec.horizon):
        for h in levels[t]:
            b = beliefs[h]
            trans = [_transition_under(spec, h[-1], pi_D[h], pi_A[(h, w)], w) for w in TYPES]
            for s2 in _child_states(spec, h[-1]):
                child = h + (s2,)
                lik = np.array([trans[w].get(s2, 0.0) for w in TYPES])
                if float(b @ lik) > 0:
                    beliefs[child] = bte_update(b, lik)
                else:
                    beliefs[child] = old_beliefs[child]
    return beliefs


def bvi(spec: AimgSpec, tol: float = 1e-10, max_iter: int = 100, max_nodes: int = 50_000) -> BviResult:
    """Alternate backward equilibrium passes and forward belief passes.

    Beliefs start at the prior on every node.  Iteration stops when the largest change
    in values and beliefs drops below ``tol`` (the first value change is measured
    against zero tables) or after ``max_iter`` rounds; ``converged=False`` is a normal
    outcome.
    """
    levels = history_tree(spec, max_nodes)
    prior = np.asarray(spec.prior, dtype=float)
    beliefs = {h: prior.copy() for t in levels for h in levels[t]}
    prev_VD = prev_VA = None
    deltas: list[dict] = []
    degenerate = 0
    converged = False
    V_D = V_A = pi_D = pi_A = None
    it = 0
    for it in range(1, max_iter + 1):
        V_D, V_A, pi_D, pi_A, deg = _backward_pass(spec, levels, beliefs)
        degenerate += deg
        new_beliefs = belief_pass(spec, levels, pi_D, pi_A, beliefs)
        dv = max(
            max(np.abs(V_D[h] - (prev_VD[h] if prev_VD else 0.0)).max(),
                np.abs(V_A[h] - (prev_VA[h] if prev_VA else 0.0)).max())
            for h in V_D
        )
        db = max(np.abs(new_beliefs[h] - beliefs[h]).max() for h in beliefs)
        deltas.append({"iteration": it, "value_change": float(dv), "belief_change": float(db)})
        log.info("bvi iteration %d: value change %.3e, belief change %.3e", it, dv, db)
        beliefs = new_beliefs  # consistent with the policies just computed
        if max(dv, db) < tol:
            converged = True
            break
        prev_VD, prev_VA = V_D, V_A
    if not converged:
        log.warning("bvi did not converge within %d iterations", max_iter)
    return BviResult(V_D, V_A, pi_D, pi_A, beliefs, converged, it, deltas, degenerate)


# ---------------------------------------------------------------------------
# PBNE verification


@dataclass
class PbneReport:
    rows: list[dict]
    tol: float

    @property
    def max_gain_D(self) -> float:
        return max((r["gain_D"] for r in self.rows), default=0.0)

    @property
    def max_gain_A(self) -> float:
        return max((r["gain_A"] for r in self.rows), default=0.0)

    @property
    def max_plan_gain_D(self) -> float:
        return max((r["plan_gain_D"] for r in self.rows), default=0.0)

    @property
    def max_c1(self) -> float:
        return max((r["c1_residual"] for r in self.rows), default=0.0)

    def violations(self, tol: float | None = None, c1_tol: float | None = None) -> list[dict]:
        tol = self.tol if tol is None else tol
        c1_tol = tol if c1_tol is None else c1_tol
        return [r for r in self.rows if r["gain_D"] > tol or r["gain_A"] > tol or r["c1_residual"] > c1_tol]

    def flagged_nodes(self, tol: float | None = None, player: str | None = None) -> list[dict]:
        """Nodes with a profitable one-step deviation, optionally for one player ("D" or "A")."""
        tol = self.tol if tol is None else tol
        keys = ("gain_D", "gain_A") if player is None else (f"gain_{player}",)
        return [r for r in self.rows if any(r[k] > tol for k in keys)]

    def passed(self, tol: float | None = None, c1_tol: float | None = None) -> bool:
        return not self.violations(tol, c1_tol)


def verify_pbne(
    spec: AimgSpec, pi_D: dict, pi_A: dict, beliefs: dict, tol: float = 1e-8, max_nodes: int = 50_000
) -> PbneReport:
    """Deviation gains and belief-consistency residuals at every history node.

    ``gain_*`` is the improvement from changing the action at this node only, with the
    policies kept below it (the perfectness test).  ``plan_gain_*`` is the improvement of
    the best deviation over the whole subtree with every node's belief held fixed.  The
    two differ for the defender when its nodes, keyed by state history, cannot tell
    which of its own earlier actions led there.  The C1 residual compares a node's
    belief with the Bayes update of its parent's belief when the node is reachable from
    the parent under the policies; it is 0 otherwise.
    """
    levels = history_tree(spec, max_nodes)
    nT = len(TYPES)
    V_D, V_A, W_D, W_A = {}, {}, {}, {}
    rows: dict = {}
    for t in range(spec.horizon, 0, -1):
        for h in levels[t]:
            s = h[-1]
            b = np.asarray(beliefs[h], dtype=float)
            d_actions = list(defender_action_set(spec, s))
            moves = attacker_moves(spec, s)

            def q(w, a_D, a_A, table_D, table_A):
                vd = defender_utility(spec, s, a_D, a_A, w)
                va = attacker_utility(spec, s, a_D, a_A, w)
                if t < spec.horizon:
                    for s2, p, _ in successors(spec, s, a_D, a_A, w):
                        vd += p * table_D[h + (s2,)][w]
                        va += p * table_A[h + (s2,)][w]
                return vd, va

            # on-policy values
            vD = np.zeros(nT)
            vA = np.zeros(nT)
            for w in TYPES:
                for a_D, pD in pi_D[h]:
                    for a_A, pA in pi_A[(h, w)]:
                        if pD * pA:
                            d, a = q(w, a_D, a_A, V_D, V_A)
                            vD[w] += pD * pA * d
                            vA[w] += pD * pA * a
            V_D[h], V_A[h] = vD, vA

            # defender: best action against pi_A with continuation = its own best deviation
            best_D = np.inf
            best_vec = None
            local_D = np.inf
            for a_D in d_actions:
                vec = np.zeros(nT)
                loc = np.zeros(nT)
                for w in TYPES:
                    for a_A, pA in pi_A[(h, w)]:
                        if pA:
                            vec[w] += pA * q(w, a_D, a_A, W_D, V_A)[0]
                            loc[w] += pA * q(w, a_D, a_A, V_D, V_A)[0]
                if b @ vec < best_D:
                    best_D, best_vec = float(b @ vec), vec
                local_D = min(local_D, float(b @ loc))
            W_D[h] = best_vec

            # attacker (each type): best move against pi_D
            wA = np.zeros(nT)
            local_A = np.zeros(nT)
            for w in TYPES:
                best = loc_best = np.inf
                for a_A in moves:
                    tot = loc = 0.0
                    for a_D, pD in pi_D[h]:
                        if pD:
                            tot += pD * q(w, a_D, a_A, V_D, W_A)[1]
                            loc += pD * q(w, a_D, a_A, V_D, V_A)[1]
                    best = min(best, tot)
                    loc_best = min(loc_best, loc)
                wA[w] = best
                local_A[w] = loc_best
            W_A[h] = wA

            on_D = float(b @ vD)
            rows[h] = {
                "time": t,
                "node": h,
                "belief0": float(b[0]),
                "gain_D": max(0.0, on_D - local_D),
                "gain_A": max(0.0, float(np.max(vA - local_A))),
                "plan_gain_D": max(0.0, on_D - best_D),
                "plan_gain_A": max(0.0, float(np.max(vA - wA))),
                "c1_residual": 0.0,
                "realizable": t == 1,
            }

    root = levels[1][0]
    rows[root]["c1_residual"] = float(np.abs(np.asarray(beliefs[root]) - np.asarray(spec.prior)).max())
    for t in range(1, spec.horizon):
        for h in levels[t]:
            b = np.asarray(beliefs[h], dtype=float)
            trans = [_transition_under(spec, h[-1], pi_D[h], pi_A[(h, w)], w) for w in TYPES]
            for s2 in _child_states(spec, h[-1]):
                child = h + (s2,)
                lik = np.array([trans[w].get(s2, 0.0) for w in TYPES])
                if float(b @ lik) > 0:
                    post = bte_update(b, lik)
                    rows[child]["c1_residual"] = float(np.abs(np.asarray(beliefs[child]) - post).max())
                    rows[child]["realizable"] = True
    ordered = [rows[h] for t in sorted(levels) for h in levels[t]]
    return PbneReport(ordered, tol)
