"""Watch trust evolve while an intruder and a legitimate user move through a small network.

Run: python3 demos/lateral_movement.py
"""

import numpy as np

from ddztd.policies import ShortestPathAttacker, ThresholdPolicy, evaluate_exact, rollout
from ddztd.rng import rng_stream
from ddztd.toys import THRESHOLD_LABELS, lateral_toy
from ddztd.trust import BayesTrustEngine

spec = lateral_toy()
attacker = ShortestPathAttacker(spec)
engine = BayesTrustEngine(attacker)
policy = ThresholdPolicy((0.6,), THRESHOLD_LABELS)

print("Graph edges:", ", ".join(f"{u}->{v}" for u, v in spec.graph.edges))
print("Defender: require MFA everywhere until P(legitimate) reaches 0.6\n")

for omega, who in ((0, "legitimate user"), (1, "intruder")):
    traj = rollout(spec, policy, attacker, omega, engine, rng_stream(3, omega))
    print(f"-- {who}")
    for t, r in enumerate(traj.records, start=1):
        trust = float(np.asarray(r.belief)[0])
        move = "stay" if r.a_A is None else f"{r.a_A[0]}->{r.a_A[1]}"
        print(f"  step {t}: trust {trust:.3f}, MFA on {len(r.a_D)} edge(s), move {move}, "
              f"{'passed' if r.passed else 'blocked'}, defender cost {r.u_D:.2f}")
    print(f"  total defender cost {traj.total_u_D():.2f}\n")

# Exact expected cost over the full game tree for a sweep of thresholds.
print("threshold  expected defender cost")
for tau in (0.0, 0.25, 0.5, 0.75, 0.99):
    ev = evaluate_exact(spec, ThresholdPolicy((tau,), THRESHOLD_LABELS), attacker, engine)
    print(f"  {tau:4.2f}     {ev.V_D:7.4f}")
