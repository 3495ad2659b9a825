"""
Reward and speed equilibrium
============================

The MSP posts a competition reward. Each worker answers with the speed that
maximises its own utility, and the MSP picks the reward that is best given those
answers. Here we watch the equilibrium move as the task grows.
"""

import warnings

import numpy as np

from reliable_cdc.errors import NonConcaveDetected
from reliable_cdc.reputation import InteractionCounts
from reliable_cdc.stackelberg import CommModel, CompModel, GameWorker, IncentiveParams, StackelbergGame

warnings.simplefilter("ignore", NonConcaveDetected)

rng = np.random.default_rng(0)
workers = [
    GameWorker(InteractionCounts(int(rng.integers(3, 15)), int(rng.integers(0, 2))), float(rng.uniform(0.7, 0.95)), i)
    for i in range(10)
]
inc = IncentiveParams(t_max=500.0)

print(" amount   R*      MSP utility  mean speed  mean worker utility  method")
for amount in (500, 1000, 2000, 4000):
    k = 5
    game = StackelbergGame(CommModel(), CompModel(task_share=amount / k), inc, workers, k)
    sol = game.solve()
    print(f"{amount:7d}  {sol.r_com_star:6.3f}  {sol.leader_utility:11.2f}  {sol.mu_star.mean():10.3f}"
          f"  {sol.follower_utilities.mean():19.2f}  {sol.method}")

# Nobody gains by deviating alone.
leader_gain, follower_gains = game.deviation_gains(sol)
print(f"\nbest unilateral gain: leader {leader_gain:.2e}, followers {follower_gains.max():.2e}")
