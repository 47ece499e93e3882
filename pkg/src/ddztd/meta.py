"""Scenario-agnostic threshold defense: one-step gradient adaptation and meta-training.

A meta policy is a pair ``(tau, gamma)``.  In a new scenario the threshold is adapted by a
single projected step ``tau - gamma * grad V_D(tau)`` with an SPSA gradient estimate.
The meta parameters minimise the sample-average post-adaptation value over a finite,
weighted scenario set.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .aimg import AimgSpec
from .errors import EmptyScenarioSet, EvaluationFailure
from .policies import SpsaConfig, ThresholdObjective, ThresholdPolicy, spsa_gradient, spsa_minimize
from .rng import child_seed, rng_stream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Scenario:
    id: str
    overrides: Mapping[str, object] = field(default_factory=dict)
    weight: float = 1.0

    def apply(self, spec: AimgSpec) -> AimgSpec:
        return spec.with_overrides(**dict(self.overrides))


@dataclass(frozen=True)
class MetaPolicy:
    tau: float = 0.5
    gamma: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"meta threshold must lie in [0, 1], got {self.tau}")
        if self.gamma < 0:
            raise ValueError(f"adaptation step must be nonnegative, got {self.gamma}")


Objective = Callable[[float, np.random.Generator], float]


def adapt(
    meta: MetaPolicy,
    objective: Objective,
    rng: np.random.Generator,
    eval_budget: int = 1,
    c: float = 0.1,
    labels=None,
) -> ThresholdPolicy:
    """One projected gradient step from ``meta.tau``.

    The gradient is the average of ``eval_budget`` SPSA estimates (two objective calls
    each) with perturbation ``c``.
    """
    if eval_budget < 1:
        raise ValueError("eval_budget must be at least 1")
    if meta.gamma == 0.0:
        return ThresholdPolicy((meta.tau,), labels)
    g = np.mean([spsa_gradient(objective, meta.tau, c, rng) for _ in range(eval_budget)])
    tau = float(np.clip(meta.tau - meta.gamma * g, 0.0, 1.0))
    return ThresholdPolicy((tau,), labels)


@dataclass(frozen=True)
class MetaConfig:
    iterations: int = 40
    a: float = 0.05
    A: float = 5.0
    c: float = 0.1  # outer SPSA perturbation
    alpha: float = 0.602
    gamma_exp: float = 0.101
    tau0: float = 0.5
    gamma0: float = 0.0
    gamma_max: float = 5.0
    gamma_scale: float = 1.0  # gamma is searched as gamma_scale * z, z in [0, gamma_max/gamma_scale]
    adapt_c: float = 0.25
    adapt_budget: int = 1
    fix_gamma: bool = False
    seed: int = 0


class ScenarioObjectives:
    """Threshold objectives for each scenario of a set over a common base spec."""

    def __init__(self, base: AimgSpec, scenarios: Sequence[Scenario], attacker_factory, engine_factory,
                 labels=None, n_eval: int = 200, exact: bool = True):
        if not scenarios:
            raise EmptyScenarioSet("scenario set is empty")
        self.scenarios = list(scenarios)
        w = np.array([s.weight for s in scenarios], dtype=float)
        if np.any(w < 0) or w.sum() <= 0:
            raise ValueError("scenario weights must be nonnegative with a positive sum")
        self.weights = w / w.sum()
        self.labels = labels
        self.objectives = []
        for sc in self.scenarios:
            spec = sc.apply(base)
            self.objectives.append(
                ThresholdObjective(spec, attacker_factory(spec), engine_factory(spec), labels, n_eval, exact)
            )

    def __len__(self):
        return len(self.scenarios)


def meta_objective(meta: MetaPolicy, objs: ScenarioObjectives, rng: np.random.Generator,
                   adapt_c: float, adapt_budget: int) -> float:
    """Weighted mean of post-adaptation values."""
    total = 0.0
    for w, obj in zip(objs.weights, objs.objectives):
        pol = adapt(meta, obj, rng_stream(child_seed(rng), 0), adapt_budget, adapt_c, objs.labels)
        total += w * obj(pol.thresholds[0], rng_stream(child_seed(rng), 1))
    return float(total)


@dataclass
class MetaResult:
    meta: MetaPolicy
    curve: list[dict]
    initial_value: float
    final_value: float


def train_meta(objs: ScenarioObjectives, config: MetaConfig) -> MetaResult:
    """SPSA over ``(tau, gamma)`` on the sample-average post-adaptation value.

    Both evaluations of one SPSA step share random numbers.  The returned meta policy
    is the better of the last iterate and the initial point (compared on a common seed).
    """
    if len(objs) == 0:
        raise EmptyScenarioSet("scenario set is empty")
    rng = rng_stream(config.seed, 51)
    z_max = config.gamma_max / config.gamma_scale

    def to_meta(z) -> MetaPolicy:
        z = np.atleast_1d(z)
        gamma = 0.0 if config.fix_gamma else float(np.clip(z[1], 0.0, z_max)) * config.gamma_scale
        return MetaPolicy(float(np.clip(z[0], 0.0, 1.0)), gamma)

    def f(z, r):
        return meta_objective(to_meta(z), objs, r, config.adapt_c, config.adapt_budget)

    x0 = np.array([config.tau0, config.gamma0 / config.gamma_scale])
    spsa_cfg = SpsaConfig(iterations=config.iterations, a=config.a, A=config.A, c=config.c,
                          alpha=config.alpha, gamma=config.gamma_exp)
    upper = np.array([1.0, 0.0 if config.fix_gamma else z_max])
    x, curve = spsa_minimize(f, x0, spsa_cfg, rng, lower=np.zeros(2), upper=upper, sort=False)
    for row in curve:
        row["tau"] = row.pop("x0")
        row["gamma"] = row.pop("x1") * config.gamma_scale
    check_seed = child_seed(rng)
    init_val = f(x0, rng_stream(check_seed, 0))
    final_val = f(x, rng_stream(check_seed, 0))
    if not (np.isfinite(init_val) and np.isfinite(final_val)):
        raise EvaluationFailure("meta objective is not finite")
    if final_val > init_val:
        log.info("meta training ended above its starting value; keeping the initial point")
        x, final_val = x0, init_val
    return MetaResult(to_meta(x), curve, init_val, final_val)


def evaluate_generalization(
    meta: MetaPolicy,
    held_out: ScenarioObjectives,
    baseline_threshold: float,
    seed: int = 0,
    adapt_c: float = 0.25,
    adapt_budget: int = 1,
    training_ids: Sequence[str] = (),
) -> list[dict]:
    """Per held-out scenario: adapted, fixed-baseline and scratch-trained values.

    The scratch learner runs SPSA from the baseline threshold with the same number of
    objective calls that adaptation used (two per gradient estimate).
    """
    overlap = {s.id for s in held_out.scenarios} & set(training_ids)
    if overlap:
        raise ValueError(f"held-out scenarios overlap the training set: {sorted(overlap)}")
    rows = []
    for k, (sc, obj) in enumerate(zip(held_out.scenarios, held_out.objectives)):
        rng = rng_stream(seed, 1000 + k)
        pol = adapt(meta, obj, rng_stream(child_seed(rng), 0), adapt_budget, adapt_c, held_out.labels)
        eval_seed = child_seed(rng)
        v_adapt = obj(pol.thresholds[0], rng_stream(eval_seed, 0))
        v_base = obj(baseline_threshold, rng_stream(eval_seed, 0))
        cfg = SpsaConfig(iterations=adapt_budget, a=0.05, c=adapt_c, gamma=0.0)
        x, _ = spsa_minimize(obj, [baseline_threshold], cfg, rng_stream(child_seed(rng), 0))
        v_scratch = obj(float(x[0]), rng_stream(eval_seed, 0))
        rows.append({"scenario": sc.id, "tau_adapted": pol.thresholds[0], "V_adapted": v_adapt,
                     "V_baseline": v_base, "tau_scratch": float(x[0]), "V_scratch": v_scratch})
    return rows
