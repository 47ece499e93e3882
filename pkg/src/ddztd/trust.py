"""Trust engines: map what the defender has seen to a belief over user types.

Three engines are provided:

* attribute-based scoring (a fixed logistic score of hand-picked attributes),
* recursive Bayesian updating driven by the game's transition, alarm and anticipated
  attacker models,
* a variational engine whose inference table ``q_phi`` is trained by maximising an
  evidence lower bound with score-function gradients.

Beliefs are plain ``numpy`` vectors indexed by type (``b[0]`` is the trust score).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit, log_softmax, softmax

from .aimg import TYPES, AimgSpec, observation_prob, transition_prob
from .errors import (
    DimensionMismatch,
    EmptyDataset,
    NonFiniteLoss,
    UnknownSymbol,
    UnrealizableObservation,
)
from .netgraph import ZtdState

log = logging.getLogger(__name__)

BELIEF_ATOL = 1e-12


def as_belief(values: Sequence[float], n_types: int | None = None) -> np.ndarray:
    b = np.asarray(values, dtype=float)
    if b.ndim != 1 or (n_types is not None and b.shape[0] != n_types):
        raise DimensionMismatch(f"belief has shape {b.shape}, expected ({n_types},)")
    if np.any(b < 0) or not np.all(np.isfinite(b)) or abs(b.sum() - 1.0) > BELIEF_ATOL:
        raise ValueError(f"not a probability vector: {b}")
    return b


def bte_update(belief: Sequence[float], likelihood: Sequence[float]) -> np.ndarray:
    """One Bayes step: ``b'(w) ∝ b(w) * lik(w)``."""
    b = np.asarray(belief, dtype=float)
    lik = np.asarray(likelihood, dtype=float)
    if b.shape != lik.shape:
        raise DimensionMismatch(f"belief {b.shape} vs likelihood {lik.shape}")
    if np.any(lik < 0):
        raise ValueError("likelihoods must be nonnegative")
    joint = b * lik
    z = joint.sum()
    if not z > 0:
        raise UnrealizableObservation("evidence has zero probability under every type")
    return joint / z


def _attacker_prob(pi_A, a_A, state, omega, history) -> float:
    if hasattr(pi_A, "prob"):
        return float(pi_A.prob(a_A, state, omega, history))
    return float(pi_A(a_A, state, omega))


def lateral_likelihood(
    spec: AimgSpec,
    state: ZtdState,
    a_D: frozenset,
    a_A,
    o: int,
    next_state: ZtdState,
    pi_A,
    history: tuple = (),
) -> np.ndarray:
    """``P(s' | s, a_D, a_A, w) * sigma(o | w) * pi_A(a_A | s, w)`` for every type."""
    return np.array(
        [
            transition_prob(spec, state, a_D, a_A, w, next_state)
            * observation_prob(spec, o, w)
            * _attacker_prob(pi_A, a_A, state, w, history)
            for w in TYPES
        ]
    )


def bte_update_lateral(
    belief: Sequence[float],
    state: ZtdState,
    a_D: frozenset,
    a_A,
    o: int,
    next_state: ZtdState,
    pi_A,
    spec: AimgSpec,
    history: tuple = (),
) -> np.ndarray:
    """Bayes update after one lateral-movement step.

    ``pi_A`` is either an attacker policy object (with a ``prob`` method) or a callable
    ``(a_A, state, omega) -> probability``.  The defender's own action probability is
    type-independent and cancels, so it is not needed.
    """
    lik = lateral_likelihood(spec, state, a_D, a_A, o, next_state, pi_A, history)
    return bte_update(belief, lik)


def abte_score(attributes: Sequence[float], weights: Sequence[float]) -> np.ndarray:
    """Attribute-based trust: ``b(0) = logistic(w . x)``."""
    x = np.asarray(attributes, dtype=float)
    w = np.asarray(weights, dtype=float)
    if x.shape != w.shape:
        raise DimensionMismatch(f"{x.shape[0] if x.ndim else 0} attributes vs {w.shape} weights")
    if not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite")
    b0 = float(expit(w @ x))
    return np.array([b0, 1.0 - b0])


# ---------------------------------------------------------------------------
# variational engine

Record = tuple[int, ...]
MODEL_FORMAT_VERSION = 1


@dataclass
class VbModel:
    """Categorical generative table plus softmax-linear inference table.

    ``q_phi(w | I) = softmax(f(I) @ phi)`` where ``f(I)`` holds symbol counts of the record
    (plus a constant 1 when ``use_bias``); ``p_theta(x | w) = softmax(theta[w])`` and the
    symbols of a record are conditionally independent given the type.
    """

    phi: np.ndarray
    theta: np.ndarray
    prior: np.ndarray
    use_bias: bool = True
    curve: list[dict] = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)
        self.prior = as_belief(self.prior)
        n_types, K = self.theta.shape
        if self.prior.shape[0] != n_types or self.phi.shape != (K + int(self.use_bias), n_types):
            raise DimensionMismatch(
                f"phi {self.phi.shape}, theta {self.theta.shape}, prior {self.prior.shape} disagree"
            )

    @classmethod
    def init(cls, n_symbols: int, prior: Sequence[float], rng: np.random.Generator | None = None,
             scale: float = 0.0, use_bias: bool = True) -> "VbModel":
        prior = as_belief(prior)
        n_types = prior.shape[0]
        if rng is None or scale == 0.0:
            phi = np.zeros((n_symbols + int(use_bias), n_types))
            theta = np.zeros((n_types, n_symbols))
        else:
            phi = scale * rng.standard_normal((n_symbols + int(use_bias), n_types))
            theta = scale * rng.standard_normal((n_types, n_symbols))
        return cls(phi, theta, prior, use_bias)

    @property
    def n_symbols(self) -> int:
        return self.theta.shape[1]

    @property
    def n_types(self) -> int:
        return self.theta.shape[0]

    def copy(self) -> "VbModel":
        return VbModel(self.phi.copy(), self.theta.copy(), self.prior.copy(), self.use_bias)

    def to_dict(self) -> dict:
        return {"format": "ddztd.vbmodel", "version": MODEL_FORMAT_VERSION, "use_bias": self.use_bias,
                "phi": self.phi.tolist(), "theta": self.theta.tolist(), "prior": self.prior.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "VbModel":
        if d.get("format") != "ddztd.vbmodel" or d.get("version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"not a version-{MODEL_FORMAT_VERSION} variational model document")
        return cls(np.array(d["phi"], dtype=float), np.array(d["theta"], dtype=float),
                   np.array(d["prior"], dtype=float), bool(d["use_bias"]))

    def counts(self, record: Sequence[int]) -> np.ndarray:
        rec = np.asarray(record, dtype=int).reshape(-1)
        if rec.size and (rec.min() < 0 or rec.max() >= self.n_symbols):
            bad = sorted({int(x) for x in rec if not 0 <= x < self.n_symbols})
            raise UnknownSymbol(f"symbols {bad} are outside the alphabet of size {self.n_symbols}")
        return np.bincount(rec, minlength=self.n_symbols).astype(float)

    def features(self, record: Sequence[int]) -> np.ndarray:
        c = self.counts(record)
        return np.append(c, 1.0) if self.use_bias else c

    def log_q(self, record: Sequence[int]) -> np.ndarray:
        return log_softmax(self.features(record) @ self.phi)

    def q(self, record: Sequence[int]) -> np.ndarray:
        return softmax(self.features(record) @ self.phi)

    def log_emission(self) -> np.ndarray:
        return log_softmax(self.theta, axis=1)

    def log_joint(self, record: Sequence[int]) -> np.ndarray:
        """``log p_theta(I, w) = log rho(w) + sum_x n_x log p_theta(x | w)`` per type."""
        c = self.counts(record)
        with np.errstate(divide="ignore"):
            log_prior = np.log(self.prior)
        return log_prior + self.log_emission() @ c


def _sample_types(q: np.ndarray, M: int, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(M)
    idx = np.searchsorted(np.cumsum(q), u, side="right")
    return np.minimum(idx, q.shape[0] - 1)


def elbo_exact(model: VbModel, record: Sequence[int]) -> float:
    q = model.q(record)
    lq = model.log_q(record)
    lj = model.log_joint(record)
    mask = q > 0
    return float(np.sum(q[mask] * (lj[mask] - lq[mask])))


def elbo_estimate(
    model: VbModel, record: Sequence[int], M: int = 1, rng: np.random.Generator | None = None,
    exact: bool = False,
) -> float:
    """Monte-Carlo lower bound ``mean_l [-log q(w_l|I) + log p(I, w_l)]``, ``w_l ~ q``."""
    if exact:
        return elbo_exact(model, record)
    if M < 1:
        raise ValueError("M must be at least 1")
    if rng is None:
        raise ValueError("sampled mode needs an rng")
    q = model.q(record)
    w = _sample_types(q, M, rng)
    vals = model.log_joint(record)[w] - model.log_q(record)[w]
    return float(vals.mean())


def _type_counts(model: VbModel, record, M: int, rng: np.random.Generator) -> np.ndarray:
    if M < 1:
        raise ValueError("M must be at least 1")
    w = _sample_types(model.q(record), M, rng)
    return np.bincount(w, minlength=model.n_types).astype(float)


def grad_phi_terms(
    model: VbModel, record: Sequence[int], M: int, rng: np.random.Generator
) -> dict[str, np.ndarray]:
    """Per-term Monte-Carlo estimates of the inference-parameter gradient.

    Returns ``score`` (mean of grad log q, zero in expectation), ``entropy`` (mean of
    log q * grad log q) and ``joint`` (mean of log p * grad log q).  The ELBO gradient
    estimator is ``joint - entropy``.
    """
    f = model.features(record)
    q = model.q(record)
    lq = model.log_q(record)
    lj = model.log_joint(record)
    n = _type_counts(model, record, M, rng) / M  # sample frequencies
    onehot_minus_q = np.eye(model.n_types) - q  # row w: grad of log q(w) wrt logits
    with np.errstate(invalid="ignore"):
        wl_q = np.where(n > 0, n * lq, 0.0)
        wl_j = np.where(n > 0, n * lj, 0.0)
    return {
        "score": np.outer(f, n @ onehot_minus_q),
        "entropy": np.outer(f, wl_q @ onehot_minus_q),
        "joint": np.outer(f, wl_j @ onehot_minus_q),
    }


def grad_phi_estimate(model: VbModel, record: Sequence[int], M: int, rng: np.random.Generator) -> np.ndarray:
    """Score-function estimator of the ELBO gradient with respect to ``phi``."""
    terms = grad_phi_terms(model, record, M, rng)
    return terms["joint"] - terms["entropy"]


def grad_theta_estimate(model: VbModel, record: Sequence[int], M: int, rng: np.random.Generator) -> np.ndarray:
    """``mean_l grad_theta log p_theta(I, w_l)`` with ``w_l ~ q_phi``."""
    c = model.counts(record)
    n = _type_counts(model, record, M, rng) / M
    p = softmax(model.theta, axis=1)
    return n[:, None] * (c[None, :] - c.sum() * p)


def grad_exact(model: VbModel, record: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form ELBO gradients (sum over types); used by the exact training mode."""
    f = model.features(record)
    q = model.q(record)
    lq = model.log_q(record)
    lj = model.log_joint(record)
    g = lj - lq
    # d ELBO / d logits = q * (g - E_q g)  (the score term integrates to zero)
    d_logits = q * (g - q @ g)
    c = model.counts(record)
    p = softmax(model.theta, axis=1)
    return np.outer(f, d_logits), q[:, None] * (c[None, :] - c.sum() * p)


# ---------------------------------------------------------------------------
# data and training


def sample_dataset(
    prior: Sequence[float], emission: np.ndarray, n_records: int, record_len: int, rng: np.random.Generator
) -> tuple[list[Record], np.ndarray]:
    """Draw a type from the prior, then ``record_len`` symbols from its emission row."""
    prior = as_belief(prior)
    emission = np.asarray(emission, dtype=float)
    types = _sample_types(prior, n_records, rng)
    records = []
    for w in types:
        syms = _sample_types(emission[w], record_len, rng)
        records.append(tuple(int(s) for s in syms))
    return records, types


def exact_posterior(prior: Sequence[float], emission: np.ndarray, record: Sequence[int]) -> np.ndarray:
    prior = np.asarray(prior, dtype=float)
    emission = np.asarray(emission, dtype=float)
    lik = np.prod(emission[:, list(record)], axis=1) if len(record) else np.ones_like(prior)
    return bte_update(prior, lik)


@dataclass(frozen=True)
class VbTrainConfig:
    n_symbols: int
    prior: tuple[float, ...] = (0.5, 0.5)
    epochs: int = 200
    batch_size: int = 64
    samples: int = 16  # M
    lr_phi: float = 0.2
    lr_theta: float = 0.05
    lr_decay: float = 0.0  # lr_k = lr / (1 + lr_decay * k)
    learn_theta: bool = True
    theta_init: tuple | None = None
    init_scale: float = 0.1
    holdout_frac: float = 0.2
    estimator: str = "score"  # or "exact"
    seed: int = 0


def _batch_tables(model: VbModel, records: Sequence[Record]):
    """Counts, features, log q and log joint for a list of records, one row each."""
    C = np.stack([model.counts(r) for r in records])
    F = np.hstack([C, np.ones((len(records), 1))]) if model.use_bias else C
    logits = F @ model.phi
    lq = log_softmax(logits, axis=1)
    with np.errstate(divide="ignore"):
        log_prior = np.log(model.prior)
    lj = log_prior[None, :] + C @ model.log_emission().T
    return C, F, lq, lj


def mean_elbo(model: VbModel, records: Sequence[Record]) -> float:
    if not records:
        return float("nan")
    _, _, lq, lj = _batch_tables(model, records)
    q = np.exp(lq)
    terms = np.where(q > 0, q * (lj - lq), 0.0)
    return float(terms.sum(axis=1).mean())


def batch_gradients(model: VbModel, records: Sequence[Record], M: int | None,
                    rng: np.random.Generator | None) -> tuple[np.ndarray, np.ndarray]:
    """Summed ELBO gradients over a batch.

    ``M=None`` gives the closed form (same as :func:`grad_exact` per record); otherwise
    the score-function estimators with ``M`` draws per record, as in
    :func:`grad_phi_estimate` and :func:`grad_theta_estimate`.
    """
    C, F, lq, lj = _batch_tables(model, records)
    q = np.exp(lq)
    if M is None:
        weights = q
        g = np.where(q > 0, lj - lq, 0.0)
        v = q * g
        d_logits = v - v.sum(axis=1, keepdims=True) * q
    else:
        u = rng.random((len(records), M))
        idx = (u[:, :, None] >= np.cumsum(q, axis=1)[:, None, :]).sum(axis=2)
        idx = np.minimum(idx, model.n_types - 1)
        weights = np.stack([np.bincount(row, minlength=model.n_types) for row in idx]) / M
        v = np.where(weights > 0, weights * (lj - lq), 0.0)
        d_logits = v - v.sum(axis=1, keepdims=True) * q
    p = softmax(model.theta, axis=1)
    g_theta = weights.T @ C - (weights * C.sum(axis=1, keepdims=True)).sum(axis=0)[:, None] * p
    return F.T @ d_logits, g_theta


def vb_train(dataset: Sequence[Record], config: VbTrainConfig, rng: np.random.Generator | None = None) -> VbModel:
    """Maximise the average ELBO by minibatch stochastic gradient ascent.

    The returned model is the iterate with the best held-out ELBO (the initial model
    included), and its ``curve`` holds one row per epoch.
    """
    from .rng import rng_stream

    if len(dataset) == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    if config.estimator not in ("score", "exact"):
        raise ValueError(f"unknown estimator {config.estimator!r}")
    rng = rng if rng is not None else rng_stream(config.seed, 11)
    data = [tuple(int(s) for s in r) for r in dataset]
    order = rng.permutation(len(data))
    n_hold = int(round(config.holdout_frac * len(data)))
    if n_hold >= len(data):
        n_hold = 0
    hold = [data[i] for i in order[:n_hold]]
    train = [data[i] for i in order[n_hold:]]
    monitor = hold or train

    model = VbModel.init(config.n_symbols, config.prior, rng, config.init_scale)
    if config.theta_init is not None:
        model.theta = np.log(np.asarray(config.theta_init, dtype=float))
    best = model.copy()
    best_score = mean_elbo(model, monitor)
    curve = [{"epoch": 0, "train_elbo": mean_elbo(model, train), "heldout_elbo": best_score}]
    M = None if config.estimator == "exact" else config.samples

    for epoch in range(1, config.epochs + 1):
        scale = 1.0 / (1.0 + config.lr_decay * (epoch - 1))
        perm = rng.permutation(len(train))
        for start in range(0, len(train), config.batch_size):
            batch = [train[i] for i in perm[start:start + config.batch_size]]
            g_phi, g_theta = batch_gradients(model, batch, M, rng)
            model.phi += scale * config.lr_phi * g_phi / len(batch)
            if config.learn_theta:
                model.theta += scale * config.lr_theta * g_theta / len(batch)
        tr, ho = mean_elbo(model, train), mean_elbo(model, monitor)
        if not (np.isfinite(tr) and np.isfinite(ho) and np.all(np.isfinite(model.phi))
                and np.all(np.isfinite(model.theta))):
            raise NonFiniteLoss(f"epoch {epoch}: train ELBO {tr}, held-out ELBO {ho}")
        curve.append({"epoch": epoch, "train_elbo": tr, "heldout_elbo": ho})
        log.debug("vb epoch %d train %.6f heldout %.6f", epoch, tr, ho)
        if ho > best_score:
            best, best_score = model.copy(), ho
    best.curve = curve
    return best


def mlte_infer(model: VbModel, record: Sequence[int]) -> tuple[np.ndarray, bool]:
    """Belief ``q_phi(. | I)``; falls back to the prior (flag ``True``) on unknown symbols."""
    try:
        return model.q(record), False
    except UnknownSymbol:
        log.warning("record %r has symbols outside the alphabet; returning the prior", tuple(record))
        return model.prior.copy(), True


# ---------------------------------------------------------------------------
# engines used inside rollouts
#
# Engines are pure: ``reset`` returns an opaque engine state, ``update`` maps a state and
# one step of evidence to a new state, and ``belief`` reads the current belief off it.
# Exact game-tree evaluation relies on this to branch without copying objects.


class BayesTrustEngine:
    """Recursive Bayes over (transition, alarm, anticipated attacker policy).

    Evidence with zero probability under every type leaves the belief unchanged, which
    is one admissible choice for unreachable information sets.
    """

    name = "bayes"

    def __init__(self, attacker_model):
        self.attacker_model = attacker_model

    def reset(self, spec: AimgSpec):
        return tuple(spec.prior)

    def belief(self, estate) -> np.ndarray:
        return np.asarray(estate, dtype=float)

    def update(self, estate, spec, state, a_D, a_A, o, next_state, history=()):
        try:
            b = bte_update_lateral(estate, state, a_D, a_A, o, next_state, self.attacker_model, spec, history)
        except UnrealizableObservation:
            return estate
        return tuple(b.tolist())


class AttributeTrustEngine:
    """Logistic score of running attributes ``(1, alarms, rejections, steps)``."""

    name = "attribute"

    def __init__(self, weights: Sequence[float] = (1.0, -1.5, -2.0, 0.0)):
        self.weights = np.asarray(weights, dtype=float)
        if self.weights.shape != (4,):
            raise DimensionMismatch("attribute engine expects four weights")

    def reset(self, spec: AimgSpec):
        return (0, 0, 0)

    def belief(self, estate) -> np.ndarray:
        return abte_score(np.concatenate(([1.0], estate)), self.weights)

    def update(self, estate, spec, state, a_D, a_A, o, next_state, history=()):
        rejected = int(a_A is not None and next_state.visited == state.visited)
        alarms, rejections, steps = estate
        return (alarms + int(o), rejections + rejected, steps + 1)


class MlteTrustEngine:
    """Variational engine reading the stream of alarm symbols seen so far.

    Before any evidence arrives the belief is the prior.
    """

    name = "mlte"

    def __init__(self, model: VbModel):
        self.model = model
        self._prior = tuple(model.prior.tolist())

    def reset(self, spec: AimgSpec):
        return ()

    def belief(self, estate) -> np.ndarray:
        if not estate:
            return np.asarray(self._prior)
        return mlte_infer(self.model, estate)[0]

    def update(self, estate, spec, state, a_D, a_A, o, next_state, history=()):
        return estate + (int(o),)
