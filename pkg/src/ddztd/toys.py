"""Small shipped instances used by the tests, demos and configs."""

from __future__ import annotations

import numpy as np

from .aimg import AimgSpec
from .case_study import LogModel
from .meta import Scenario
from .netgraph import NetworkGraph, build_graph

THRESHOLD_LABELS = ("mfa_all", "idle")


def two_node_graph() -> NetworkGraph:
    return build_graph(["a", "b"], [("a", "b")], "a", "b")


def three_node_graph() -> NetworkGraph:
    return build_graph(["a", "b", "c"], [("a", "b"), ("a", "c"), ("b", "c")], "a", "c")


def bayes_toy() -> AimgSpec:
    """Two nodes, three steps, a sharp detector."""
    return AimgSpec(two_node_graph(), horizon=3, prior=(0.5, 0.5), alpha=0.1, beta=0.9, p_pass=0.9)


def pg_toy() -> AimgSpec:
    """Two states (at entry, at target), two MFA choices, two steps."""
    return AimgSpec(two_node_graph(), horizon=2, prior=(0.5, 0.5), breach_cost=10.0, alpha=0.2, beta=0.8,
                    p_pass=0.8, default_edge_cost=1.0)


def lateral_toy() -> AimgSpec:
    """Three-node credential graph where MFA on every edge pays off until trust is earned."""
    return AimgSpec(three_node_graph(), horizon=3, prior=(0.5, 0.5), breach_cost=10.0, alpha=0.2, beta=0.8,
                    p_pass=0.9, defense_budget=2, default_edge_cost=1.0)


def bvi_toys() -> dict[str, AimgSpec]:
    return {
        "two_node_h2": AimgSpec(two_node_graph(), horizon=2, prior=(0.5, 0.5), breach_cost=10.0,
                                attacker_mfa_cost=4.0, reward=5.0, alpha=0.2, beta=0.8, p_pass=0.8),
        "three_node_h2": AimgSpec(three_node_graph(), horizon=2, prior=(0.6, 0.4), breach_cost=12.0,
                                  attacker_mfa_cost=3.0, reward=6.0, alpha=0.1, beta=0.7, p_pass=0.9),
        "three_node_h3": AimgSpec(three_node_graph(), horizon=3, prior=(0.5, 0.5), breach_cost=10.0,
                                  attacker_mfa_cost=5.0, reward=5.0, alpha=0.2, beta=0.8, p_pass=0.9),
    }


def meta_scenarios() -> list[Scenario]:
    """Two scenarios over :func:`lateral_toy` with opposite optimal thresholds.

    ``costly_breach`` rewards MFA until trust is established (optimal tau in [0.5, 0.99]);
    ``cheap_breach`` makes MFA not worth its price (optimal tau near 0).
    """
    return [
        Scenario("costly_breach", {}, 1.0),
        Scenario("cheap_breach", {"breach_cost": 1.0, "default_edge_cost": 2.0}, 1.0),
    ]


def case_log_model() -> LogModel:
    """Two log symbols: quiet and suspicious; suspicious logs raise the detector's alarm rate."""
    return LogModel(
        symbols=("quiet", "suspicious"),
        Q=np.array([[0.8, 0.2], [0.3, 0.7]]),
        initial=np.array([0.7, 0.3]),
        C=np.array([0.5, 0.8]),
        ell=np.array([1.0, 2.0]),
        overrides=({}, {"prior": (0.3, 0.7), "breach_cost": 15.0}),
    )


def vb_emission() -> np.ndarray:
    """Alarm-symbol emission table (types x symbols) for the variational toy."""
    return np.array([[0.8, 0.15, 0.05], [0.2, 0.3, 0.5]])
