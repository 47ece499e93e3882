"""Finite-horizon Dynkin stopping games on finite Markov chains.

Two players watch a chain ``X_0, X_1, ...`` and each picks a stopping time.  The
``tau`` player maximises and the ``sigma`` player minimises

    H = phi(X_tau) 1{tau < sigma} + psi(X_sigma) 1{sigma < tau} + zeta(X_tau) 1{tau = sigma},

with both forced to stop at ``T``.  Stopping rules are Markov: boolean arrays of shape
``(T + 1, n_states)`` whose last row is all ``True``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .errors import InvalidSpec, OrderingViolation, StateSpaceTooLarge

log = logging.getLogger(__name__)

ADC = "ADC"
DDC = "DDC_standard"
MIXED = "mixed"

ROW_TOL = 1e-12


@dataclass(frozen=True)
class DynkinGameSpec:
    P: np.ndarray
    phi: np.ndarray
    zeta: np.ndarray
    psi: np.ndarray
    T: int
    states: tuple | None = None

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        n = P.shape[0]
        if P.ndim != 2 or P.shape != (n, n):
            raise InvalidSpec(f"transition matrix must be square, got {P.shape}")
        if np.any(P < 0) or np.abs(P.sum(axis=1) - 1.0).max() > ROW_TOL:
            raise InvalidSpec("transition rows must be probability vectors")
        vecs = {}
        for name in ("phi", "zeta", "psi"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if v.shape != (n,):
                raise InvalidSpec(f"{name} must have {n} entries, got {v.shape}")
            if not np.all(np.isfinite(v)):
                raise InvalidSpec(f"{name} must be finite")
            vecs[name] = v
        if self.T < 0:
            raise InvalidSpec("horizon must be nonnegative")
        lo = np.minimum(vecs["phi"], vecs["psi"])
        hi = np.maximum(vecs["phi"], vecs["psi"])
        if np.any(vecs["zeta"] < lo) or np.any(vecs["zeta"] > hi):
            bad = np.flatnonzero((vecs["zeta"] < lo) | (vecs["zeta"] > hi)).tolist()
            raise InvalidSpec(f"zeta must lie between phi and psi; violated at states {bad}")
        if self.states is not None and len(self.states) != n:
            raise InvalidSpec("state labels do not match the chain size")
        object.__setattr__(self, "P", P)
        for name, v in vecs.items():
            object.__setattr__(self, name, v)

    @property
    def n(self) -> int:
        return self.P.shape[0]


@dataclass(frozen=True)
class DynkinSolution:
    values: np.ndarray  # (T + 1, n)
    tau_stop: np.ndarray  # (T + 1, n) bool
    sigma_stop: np.ndarray  # (T + 1, n) bool
    ordering: str


def forced_rule(rule, T: int, n: int) -> np.ndarray:
    r = np.array(rule, dtype=bool)
    if r.shape != (T + 1, n):
        raise ValueError(f"stopping rule must have shape {(T + 1, n)}, got {r.shape}")
    r[T] = True
    return r


# ---------------------------------------------------------------------------


def semigroup_apply(spec: DynkinGameSpec, g, t: int, mode: str = "exact", n_samples: int = 10_000,
                    rng: np.random.Generator | None = None):
    """``E_x[g(X_t)]`` for every start ``x``.

    ``mode="exact"`` multiplies by ``P`` ``t`` times and returns the vector;
    ``mode="mc"`` simulates ``n_samples`` paths per state and returns ``(mean, stderr)``.
    """
    g = np.asarray(g, dtype=float)
    if t < 0:
        raise ValueError("t must be nonnegative")
    if mode == "exact":
        out = g.copy()
        for _ in range(t):
            out = spec.P @ out
        return out
    if mode != "mc":
        raise ValueError("mode must be 'exact' or 'mc'")
    if rng is None:
        raise ValueError("Monte-Carlo mode needs a generator")
    cdf = np.cumsum(spec.P, axis=1)
    means = np.empty(spec.n)
    ses = np.empty(spec.n)
    for x in range(spec.n):
        pos = np.full(n_samples, x)
        for _ in range(t):
            u = rng.random(n_samples)
            pos = np.minimum((u[:, None] >= cdf[pos]).sum(axis=1), spec.n - 1)
        vals = g[pos]
        means[x] = vals.mean()
        ses[x] = vals.std(ddof=1) / np.sqrt(n_samples) if n_samples > 1 else np.inf
    return means, ses


def classify_payoffs(phi, zeta, psi, atol: float = 0.0) -> str:
    phi, zeta, psi = (np.asarray(v, dtype=float) for v in (phi, zeta, psi))
    if np.all(psi <= zeta + atol) and np.all(zeta <= phi + atol):
        return ADC
    if np.all(phi <= zeta + atol) and np.all(zeta <= psi + atol):
        return DDC
    return MIXED


def classify_ordering(spec: DynkinGameSpec) -> str:
    """``ADC`` if psi <= zeta <= phi, ``DDC_standard`` if phi <= zeta <= psi, else ``mixed``.

    When both hold (all three payoffs equal) ``ADC`` is reported.
    """
    return classify_payoffs(spec.phi, spec.zeta, spec.psi)


def _require(spec, ordering):
    got = classify_ordering(spec)
    if got != ordering and not (ordering == DDC and got == ADC and np.array_equal(spec.phi, spec.psi)):
        raise OrderingViolation(f"instance ordering is {got}, solver needs {ordering}")


def adc_branch(phi: np.ndarray, zeta: np.ndarray, cont: np.ndarray) -> np.ndarray:
    """Branch operator: continue-value where it exceeds ``phi``, otherwise ``zeta``."""
    return np.where(phi < cont, cont, zeta)


def solve_adc(spec: DynkinGameSpec) -> DynkinSolution:
    """Branch-operator recursion for the ordering psi <= zeta <= phi.

    ``v_T = zeta``; ``v_t = P v_{t+1}`` where that exceeds ``phi`` and ``zeta`` otherwise.
    ``tau`` stops where ``v_t`` equals ``zeta`` or ``phi``; ``sigma`` where it equals
    ``zeta`` or ``psi``.
    """
    _require(spec, ADC)
    T, n = spec.T, spec.n
    v = np.empty((T + 1, n))
    v[T] = spec.zeta
    for t in range(T - 1, -1, -1):
        v[t] = adc_branch(spec.phi, spec.zeta, spec.P @ v[t + 1])
    tau = (v == spec.zeta) | (v == spec.phi)
    sigma = (v == spec.zeta) | (v == spec.psi)
    return DynkinSolution(v, forced_rule(tau, T, n), forced_rule(sigma, T, n), ADC)


def solve_ddc(spec: DynkinGameSpec) -> DynkinSolution:
    """Min-max recursion for the ordering phi <= zeta <= psi.

    ``v_T = zeta``; ``v_t = min(psi, max(phi, P v_{t+1}))``.  ``tau`` stops where
    ``v_t = phi``, ``sigma`` where ``v_t = psi``.
    """
    _require(spec, DDC)
    T, n = spec.T, spec.n
    v = np.empty((T + 1, n))
    v[T] = spec.zeta
    for t in range(T - 1, -1, -1):
        v[t] = np.minimum(spec.psi, np.maximum(spec.phi, spec.P @ v[t + 1]))
    tau = v == spec.phi
    sigma = v == spec.psi
    return DynkinSolution(v, forced_rule(tau, T, n), forced_rule(sigma, T, n), DDC)


def solve_markov_saddle(spec: DynkinGameSpec) -> DynkinSolution:
    """Statewise pure saddle of the 2x2 stop/continue stage game.

    Stage payoffs are ``zeta`` (both stop), ``phi`` (only tau), ``psi`` (only sigma) and
    the continuation value (neither).  When ``phi <= psi`` the value is
    ``min(psi, max(phi, cont))``; when ``psi < phi`` both stopping is a saddle and the
    value is ``zeta``.  Works for any instance satisfying the sandwich condition.
    """
    T, n = spec.T, spec.n
    v = np.empty((T + 1, n))
    tau = np.ones((T + 1, n), dtype=bool)
    sigma = np.ones((T + 1, n), dtype=bool)
    v[T] = spec.zeta
    std = spec.phi <= spec.psi
    for t in range(T - 1, -1, -1):
        c = spec.P @ v[t + 1]
        ddc_v = np.minimum(spec.psi, np.maximum(spec.phi, c))
        v[t] = np.where(std, ddc_v, spec.zeta)
        # standard states: tau stops iff phi >= cont, sigma stops iff psi <= cont
        tau[t] = np.where(std, spec.phi >= np.minimum(c, spec.psi), True)
        sigma[t] = np.where(std, spec.psi <= np.maximum(c, spec.phi), True)
    return DynkinSolution(v, tau, sigma, classify_ordering(spec))


# ---------------------------------------------------------------------------
# payoff evaluation


def payoff(spec: DynkinGameSpec, rule_tau, rule_sigma) -> np.ndarray:
    """Expected payoff of the subgame starting at every ``(t, x)``, shape ``(T + 1, n)``.

    Rules may carry leading batch dimensions, ``(..., T + 1, n)``; they broadcast.
    """
    T = spec.T
    tau = np.asarray(rule_tau, dtype=bool)
    sig = np.asarray(rule_sigma, dtype=bool)
    shape = np.broadcast_shapes(tau.shape, sig.shape)
    if shape[-2:] != (T + 1, spec.n):
        raise ValueError(f"rules must end in shape {(T + 1, spec.n)}, got {shape}")
    W = np.empty(shape)
    W[..., T, :] = spec.zeta
    for t in range(T - 1, -1, -1):
        a = tau[..., t, :]
        b = sig[..., t, :]
        cont = W[..., t + 1, :] @ spec.P.T
        W[..., t, :] = np.where(a & b, spec.zeta, np.where(a, spec.phi, np.where(b, spec.psi, cont)))
    return W


def payoff_by_paths(spec: DynkinGameSpec, rule_tau, rule_sigma, x0: int) -> float:
    """Independent oracle: enumerate every path from ``x0`` and apply the stopping rules."""
    T, n = spec.T, spec.n
    tau = forced_rule(rule_tau, T, n)
    sig = forced_rule(rule_sigma, T, n)
    total = 0.0
    for tail in itertools.product(range(n), repeat=T):
        path = (x0,) + tail
        p = 1.0
        for a, b in zip(path, path[1:]):
            p *= spec.P[a, b]
        if p == 0:
            continue
        ts = next(t for t in range(T + 1) if tau[t, path[t]])
        ss = next(t for t in range(T + 1) if sig[t, path[t]])
        if ts < ss:
            h = spec.phi[path[ts]]
        elif ss < ts:
            h = spec.psi[path[ss]]
        else:
            h = spec.zeta[path[ts]]
        total += p * h
    return total


# ---------------------------------------------------------------------------
# verification


def all_markov_rules(T: int, n: int, cap: int = 2**16) -> np.ndarray:
    """Every Markov rule (free decisions on times ``< T``), shape ``(2**(n*T), T+1, n)``."""
    k = n * T
    if 2**k > cap:
        raise StateSpaceTooLarge(f"{2**k} Markov rules exceed the enumeration cap {cap}")
    bits = ((np.arange(2**k)[:, None] >> np.arange(k)[None, :]) & 1).astype(bool)
    rules = np.ones((2**k, T + 1, n), dtype=bool)
    rules[:, :T, :] = bits.reshape(2**k, T, n)
    return rules


def best_response_values(spec: DynkinGameSpec, rule_other, player: str) -> np.ndarray:
    """Optimal-stopping value of ``player`` against a fixed Markov rule of the other.

    Dynamic programming over ``(t, x)``; optimal over all stopping times, not only Markov
    ones.  Rules may be batched.
    """
    T = spec.T
    other = np.asarray(rule_other, dtype=bool)
    W = np.empty(other.shape)
    W[..., T, :] = spec.zeta
    for t in range(T - 1, -1, -1):
        o = other[..., t, :]
        cont = W[..., t + 1, :] @ spec.P.T
        if player == "tau":
            W[..., t, :] = np.where(o, np.maximum(spec.zeta, spec.psi), np.maximum(spec.phi, cont))
        elif player == "sigma":
            W[..., t, :] = np.where(o, np.minimum(spec.zeta, spec.phi), np.minimum(spec.psi, cont))
        else:
            raise ValueError("player must be 'tau' or 'sigma'")
    return W


@dataclass
class DdeReport:
    tau_gain: np.ndarray  # (T + 1, n): best deviation gain of the maximiser
    sigma_gain: np.ndarray  # (T + 1, n): best deviation gain of the minimiser
    tol: float
    method: str

    @property
    def max_gain(self) -> float:
        return float(max(self.tau_gain.max(initial=0.0), self.sigma_gain.max(initial=0.0)))

    @property
    def passed(self) -> bool:
        return self.max_gain <= self.tol

    def worst(self) -> tuple[str, int, int, float]:
        """``(player, t, x, gain)`` of the largest violation."""
        if self.tau_gain.max() >= self.sigma_gain.max():
            t, x = np.unravel_index(int(np.argmax(self.tau_gain)), self.tau_gain.shape)
            return "tau", int(t), int(x), float(self.tau_gain[t, x])
        t, x = np.unravel_index(int(np.argmax(self.sigma_gain)), self.sigma_gain.shape)
        return "sigma", int(t), int(x), float(self.sigma_gain[t, x])

    def violations(self) -> list[tuple[str, int, int, float]]:
        out = []
        for name, g in (("tau", self.tau_gain), ("sigma", self.sigma_gain)):
            for t, x in zip(*np.nonzero(g > self.tol)):
                out.append((name, int(t), int(x), float(g[t, x])))
        return out


def verify_dde(spec: DynkinGameSpec, rule_tau, rule_sigma, tol: float = 1e-9, method: str = "enumerate",
               cap: int = 2**16) -> DdeReport:
    """Saddle-point check of a rule pair in every subgame ``(t, x)``.

    ``method="enumerate"`` tries every Markov rule of each player against the other's
    fixed rule; ``"dp"`` solves each player's optimal-stopping problem instead (same
    answer, any size); ``"auto"`` enumerates when within ``cap`` and uses DP otherwise.
    """
    T, n = spec.T, spec.n
    tau = forced_rule(rule_tau, T, n)
    sig = forced_rule(rule_sigma, T, n)
    base = payoff(spec, tau, sig)
    if method == "auto":
        method = "enumerate" if 2 ** (n * T) <= cap else "dp"
    if method == "enumerate":
        rules = all_markov_rules(T, n, cap)
        best_tau = payoff(spec, rules, sig[None]).max(axis=0)
        best_sigma = payoff(spec, tau[None], rules).min(axis=0)
    elif method == "dp":
        best_tau = best_response_values(spec, sig, "tau")
        best_sigma = best_response_values(spec, tau, "sigma")
    else:
        raise ValueError("method must be 'enumerate', 'dp' or 'auto'")
    return DdeReport(np.maximum(best_tau - base, 0.0), np.maximum(base - best_sigma, 0.0), tol, method)


def brute_force_values(spec: DynkinGameSpec, cap: int = 2**16) -> tuple[np.ndarray, np.ndarray]:
    """``(sup_tau inf_sigma, inf_sigma sup_tau)`` at ``t = 0`` for every start state.

    The outer player ranges over every Markov rule; the inner optimisation is exact
    optimal stopping, so these are the lower and upper values over Markov rules.
    """
    rules = all_markov_rules(spec.T, spec.n, cap)
    lower = best_response_values(spec, rules, "sigma")[:, 0, :].max(axis=0)
    upper = best_response_values(spec, rules, "tau")[:, 0, :].min(axis=0)
    return lower, upper


# ---------------------------------------------------------------------------
# monotonicity of the branch recursion


def adc_value_family(spec: DynkinGameSpec) -> np.ndarray:
    """``V[t, k]`` = value at time ``k`` of the branch recursion with horizon ``t`` (``k <= t``).

    Entries with ``k > t`` are NaN.
    """
    T, n = spec.T, spec.n
    V = np.full((T + 1, T + 1, n), np.nan)
    for t in range(T + 1):
        V[t, t] = spec.zeta
        for k in range(t - 1, -1, -1):
            V[t, k] = adc_branch(spec.phi, spec.zeta, spec.P @ V[t, k + 1])
    return V


def check_monotone(spec: DynkinGameSpec, atol: float = 0.0, require_adc: bool = True) -> tuple[bool, list[dict]]:
    """Check ``V^k_k <= V^t_k <= V^{t+1}_k`` for all ``k <= t < T`` statewise.

    Returns the verdict and one row per ``(k, t, x)`` comparison that failed (empty when
    monotone).  ``require_adc=False`` runs the check on any instance (negative controls).
    """
    if require_adc:
        _require(spec, ADC)
    V = adc_value_family(spec)
    T = spec.T
    failures = []
    for k in range(T + 1):
        for t in range(k, T):
            lo = V[k, k]
            mid = V[t, k]
            hi = V[t + 1, k]
            for x in np.flatnonzero((lo > mid + atol) | (mid > hi + atol)):
                failures.append({"k": k, "t": t, "x": int(x), "V_kk": float(lo[x]),
                                 "V_tk": float(mid[x]), "V_t1k": float(hi[x])})
    return not failures, failures


# ---------------------------------------------------------------------------
# information asymmetry


@dataclass(frozen=True)
class DdgiaSpec:
    game: DynkinGameSpec
    emission: np.ndarray  # (n, |O1|, |O2|) joint observation law per state

    def __post_init__(self):
        E = np.asarray(self.emission, dtype=float)
        if E.ndim != 3 or E.shape[0] != self.game.n:
            raise InvalidSpec(f"emission must have shape (n_states, |O1|, |O2|), got {E.shape}")
        if np.any(E < 0) or np.abs(E.sum(axis=(1, 2)) - 1.0).max() > ROW_TOL:
            raise InvalidSpec("emission rows must be joint probability tables")
        object.__setattr__(self, "emission", E)

    @classmethod
    def from_marginals(cls, game: DynkinGameSpec, O1, O2) -> "DdgiaSpec":
        """Conditionally independent private signals with per-state laws ``O1``, ``O2``."""
        O1 = np.asarray(O1, dtype=float)
        O2 = np.asarray(O2, dtype=float)
        return cls(game, O1[:, :, None] * O2[:, None, :])


def _history_rules(n_obs: int, T: int, cap: int) -> tuple[np.ndarray, list[dict]]:
    """All observation-history-feedback rules as bit arrays over the history index."""
    index: list[dict] = []
    k = 0
    for t in range(T):
        table = {}
        for hist in itertools.product(range(n_obs), repeat=t + 1):
            table[hist] = k
            k += 1
        index.append(table)
    if 2**k > cap:
        raise StateSpaceTooLarge(f"{2**k} history-feedback rules exceed the cap {cap}")
    bits = ((np.arange(2**k)[:, None] >> np.arange(k)[None, :]) & 1).astype(bool)
    return bits, index


def _stop_times(bits: np.ndarray, index: list[dict], obs_path: tuple, T: int) -> np.ndarray:
    st = np.full(bits.shape[0], T)
    for t in range(T - 1, -1, -1):
        col = index[t][obs_path[: t + 1]]
        st = np.where(bits[:, col], t, st)
    return st


@dataclass(frozen=True)
class DdgiaBounds:
    lower: np.ndarray
    upper: np.ndarray
    tol: float

    @property
    def has_value(self) -> np.ndarray:
        return np.abs(self.upper - self.lower) <= self.tol

    @property
    def gap(self) -> np.ndarray:
        return self.upper - self.lower


def ddgia_bounds(spec: DdgiaSpec, cap: int = 2**12, tol: float = 1e-9) -> DdgiaBounds:
    """Lower (max-min) and upper (min-max) values over history-feedback rules.

    A rule of player ``i`` decides, at each ``t < T`` and for each history of its own
    signals ``(o_0, ..., o_t)``, whether to stop.  Values are per initial state.
    """
    g = spec.game
    T, n = g.T, g.n
    E = spec.emission
    n1, n2 = E.shape[1], E.shape[2]
    bits1, idx1 = _history_rules(n1, T, cap)
    bits2, idx2 = _history_rules(n2, T, cap)
    R, S = bits1.shape[0], bits2.shape[0]
    lower = np.empty(n)
    upper = np.empty(n)
    for x0 in range(n):
        M = np.zeros((R, S))
        for tail in itertools.product(range(n), repeat=T):
            path = (x0,) + tail
            p_path = np.prod([g.P[a, b] for a, b in zip(path, path[1:])]) if T else 1.0
            if p_path == 0:
                continue
            for obs in itertools.product(itertools.product(range(n1), range(n2)), repeat=T + 1):
                p = p_path * np.prod([E[path[t], o1, o2] for t, (o1, o2) in enumerate(obs)])
                if p == 0:
                    continue
                o1 = tuple(o[0] for o in obs)
                o2 = tuple(o[1] for o in obs)
                st = _stop_times(bits1, idx1, o1, T)[:, None]
                ss = _stop_times(bits2, idx2, o2, T)[None, :]
                first = np.minimum(st, ss)
                states = np.asarray(path)[first]
                H = np.where(st < ss, g.phi[states], np.where(ss < st, g.psi[states], g.zeta[states]))
                M += p * H
        lower[x0] = M.min(axis=1).max()
        upper[x0] = M.max(axis=0).min()
    return DdgiaBounds(lower, upper, tol)
