"""
Miner coalitions by merge and split
===================================

Workers that pass the reputation filter are dealt to miners. Miners then merge
and split until no move is preferred. The best coalition supplies the workers.
"""

import numpy as np

from reliable_cdc.coalition import CoalitionConfig, assign_workers, form_coalitions, is_dhp_stable

rng = np.random.default_rng(3)
reputations = {w: float(rng.beta(6, 2)) for w in range(40)}

assignments, total, discarded = assign_workers(reputations, n_miners=8, rep_threshold=0.6)
print(f"{len(discarded)} of {len(reputations)} workers fall below the threshold")
for a in assignments:
    print(f"  miner {a.miner_id}: {a.n_workers} workers, reputation sum {a.reputation_sum:.2f}")

for preference in ("pareto", "coalition"):
    cfg = CoalitionConfig(total_miners=8, total_reputation_sum=total, preference=preference)
    res = form_coalitions(assignments, cfg)
    print(f"\n{preference} order: partition {res.partition.as_lists()}")
    for step in res.trace:
        print(f"  step {step.step}: {step.operation} {step.before} -> {step.after}, "
              f"total utility {step.total_before:.3f} -> {step.total_after:.3f}")
    print("  best coalition:", sorted(res.best), "| stable:", is_dhp_stable(res.partition, assignments, cfg))
