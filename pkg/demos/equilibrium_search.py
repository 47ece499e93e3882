"""Solve a three-step lateral-movement game for a belief-consistent equilibrium.

Backward induction fixes beliefs and solves each stage as a Bayesian matrix game;
a forward pass then refreshes the beliefs from the strategies, until both settle.

Run: python3 demos/equilibrium_search.py
"""

from ddztd.equilibrium import bvi, verify_pbne
from ddztd.toys import bvi_toys

spec = bvi_toys()["three_node_h3"]
res = bvi(spec, tol=1e-10)
v_D, v_A = res.value(spec)
print(f"converged={res.converged} after {res.iterations} iterations")
print(f"defender value {v_D:.4f}; attacker value by type {v_A}")

rep = verify_pbne(spec, res.pi_D, res.pi_A, res.beliefs, tol=1e-8)
print(f"single-node deviation gains: defender {rep.max_gain_D:.1e}, attacker {rep.max_gain_A:.1e}")
print(f"verifier verdict: {'PASS' if rep.passed else 'FAIL'}")

# Belief nodes are keyed by the visible state history, which does not record the
# defender's own past MFA choices.  A defender who rewrites its plan at several nodes
# at once, holding beliefs fixed, can therefore do a little better than any single
# change suggests.
print(f"multi-node plan gain for the defender: {rep.max_plan_gain_D:.4f}")

print("\nroot strategies:")
root = (spec.initial_state(),)
for a_D, p in res.pi_D[root]:
    if p > 1e-9:
        edges = ", ".join(f"{u}->{v}" for u, v in sorted(a_D)) or "none"
        print(f"  defender MFA on [{edges}] with prob {p:.3f}")
