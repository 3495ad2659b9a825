"""
Reputation from interaction counts
==================================

Three MSPs have worked with the same worker. We build each MSP's local opinion,
then let MSP 0 combine its own view with the others' recommendations.
"""

from reliable_cdc.reputation import (
    InteractionCounts,
    Recommendation,
    ReputationParams,
    ServiceHistory,
    composite_opinion,
    local_opinion,
    recommender_weights,
    reputation_value,
    social_tie,
)

params = ReputationParams()  # sigma1 = 0.6, sigma2 = 0.4, gamma = 0.5

# Each MSP's own tally of good and bad tasks for worker 7.
counts = {0: InteractionCounts(2, 1), 1: InteractionCounts(10, 2), 2: InteractionCounts(4, 4)}
local = {m: local_opinion(c, params) for m, c in counts.items()}
for m, op in local.items():
    print(f"MSP {m}: b={op.belief:.3f} d={op.disbelief:.3f} u={op.uncertainty:.3f} "
          f"reputation={reputation_value(op, params.gamma):.3f}")

# How much MSP 0 trusts the others depends on how many workers they share.
served = {0: {1, 2, 3, 7}, 1: {2, 3, 7, 9}, 2: {7, 11, 12}}
ties = [social_tie(ServiceHistory(0, served[0]), ServiceHistory(r, served[r])) for r in (1, 2)]
print("social ties of MSP 0 to MSPs 1, 2:", [round(t, 3) for t in ties])
print("recommender weights:", [round(w, 3) for w in recommender_weights(ties, [local[1], local[2]])])

# Fuse the weighted recommendation into MSP 0's view.
recs = [Recommendation(t, local[r]) for t, r in zip(ties, (1, 2))]
fused = composite_opinion(local[0], recs)
print(f"composite for MSP 0: reputation={reputation_value(fused, params.gamma):.3f} "
      f"(local only {reputation_value(local[0], params.gamma):.3f})")
print("passes the 0.6 threshold:", reputation_value(fused, params.gamma) >= params.rep_threshold)
