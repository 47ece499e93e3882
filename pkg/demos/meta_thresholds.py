"""A single trust threshold cannot serve two very different environments; a meta-learned
starting point plus one quick adaptation step can.

Run: python3 demos/meta_thresholds.py   (about 5 s)
"""

import numpy as np

from ddztd.meta import MetaConfig, ScenarioObjectives, meta_objective, train_meta
from ddztd.policies import ShortestPathAttacker
from ddztd.rng import rng_stream
from ddztd.toys import THRESHOLD_LABELS, lateral_toy, meta_scenarios
from ddztd.trust import BayesTrustEngine

objs = ScenarioObjectives(lateral_toy(), meta_scenarios(), ShortestPathAttacker,
                          lambda s: BayesTrustEngine(ShortestPathAttacker(s)), THRESHOLD_LABELS, exact=True)
grid = np.round(np.arange(0, 1.0001, 0.01), 2)
table = np.array([[obj(t) for t in grid] for obj in objs.objectives])
mix = objs.weights @ table

for sc, row in zip(objs.scenarios, table):
    best = grid[row <= row.min() + 1e-12]
    print(f"{sc.id:14s} best threshold in [{best.min():.2f}, {best.max():.2f}], cost {row.min():.3f}")
print(f"one threshold for both: best average cost {mix.min():.3f} at tau={grid[mix.argmin()]:.2f}")

res = train_meta(objs, MetaConfig(iterations=60, a=0.3, c=0.3, gamma_scale=0.1, gamma_max=0.3,
                                  adapt_c=0.3, seed=0))
value = meta_objective(res.meta, objs, rng_stream(1000, 0), 0.3, 1)
print(f"meta start tau={res.meta.tau:.3f}, step {res.meta.gamma:.3f}: average cost after adapting {value:.3f}")
