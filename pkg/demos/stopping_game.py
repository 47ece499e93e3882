"""When should the defender cut a session off?  Episodes of zero-trust play feed a
two-player stopping game, solved by backward induction and checked against every
deviation.

The second half shows an instance where the branch recursion for adversarial
dominance returns rules that are not a saddle point, and the CLI exits with status 2.

Run: python3 demos/stopping_game.py
"""

import tempfile
from pathlib import Path

import numpy as np
import yaml

from ddztd import cli
from ddztd.case_study import run_dd_ztd
from ddztd.dynkin import DynkinGameSpec, solve_adc, solve_markov_saddle, verify_dde
from ddztd.policies import ShortestPathAttacker, ThresholdPolicy
from ddztd.rng import rng_stream
from ddztd.toys import THRESHOLD_LABELS, case_log_model, lateral_toy
from ddztd.trust import BayesTrustEngine

spec = lateral_toy()
rep = run_dd_ztd(spec, ThresholdPolicy((0.6,), THRESHOLD_LABELS), ShortestPathAttacker,
                 BayesTrustEngine(ShortestPathAttacker(spec)), case_log_model(), T=3, n_rollouts=1,
                 rng=rng_stream(0), exact_costs=True)
chain = rep.chain
for s, c, C in zip(chain.symbols, chain.cost, chain.C):
    print(f"log symbol {s:10s}: expected episode cost {c:.3f}, cut-off cost {C:.2f}")
print(rep.message)
print(f"dominance condition holds: {rep.dominance.holds}; deviation check passed: {rep.verify_passed}")
print("defender cut-off epoch distribution:", np.round(rep.cutoff_distribution, 4))

print("\n-- a two-state instance where the branch recursion breaks")
game = DynkinGameSpec(P=[[0, 1], [1, 0]], phi=[-2, -1], zeta=[-2, -1], psi=[-2, -2], T=1)
sol = solve_adc(game)
check = verify_dde(game, sol.tau_stop, sol.sigma_stop)
print(f"branch recursion value at t=0: {sol.values[0]}, largest deviation gain {check.max_gain}")
print("  (at state 0 every stop pays -2, yet the recursion waits for -1; the minimiser profits by stopping)")
print(f"statewise saddle solver value at t=0: {solve_markov_saddle(game).values[0]}")

cfg = {"schema_version": 1, "name": "adc_counterexample", "seed": 0,
       "dynkin": {"P": [[0.0, 1.0], [1.0, 0.0]], "phi": [-2.0, -1.0], "zeta": [-2.0, -1.0],
                  "psi": [-2.0, -2.0], "T": 1}}
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "adc.yaml"
    path.write_text(yaml.safe_dump(cfg))
    code = cli.main(["solve-dynkin", "--config", str(path), "--out", str(Path(tmp) / "run")])
print(f"ddztd solve-dynkin exit status: {code}")
