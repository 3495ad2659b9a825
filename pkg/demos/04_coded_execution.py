"""
Coded matrix-vector multiplication
==================================

A 40 x 25 task is cut into K = 5 row blocks and encoded into N = 8 shards. Any
five finished shards are enough to rebuild A x, so the three slowest workers
never hold up the result.
"""

import numpy as np

from reliable_cdc.cdc import CdcTask, execute, fastest, task_latency
from reliable_cdc.stackelberg import CommModel, CompModel

rng = np.random.default_rng(1)
task = CdcTask(rng.standard_normal((40, 25)), rng.standard_normal(25), k=5, n=8)
speeds = rng.uniform(2.0, 20.0, size=8)
comp = CompModel(task_share=task.block_rows * 25)

y, latency, samples, generator = execute(task, speeds, CommModel(), comp, seed=7)
for s in sorted(samples, key=lambda s: s.total):
    print(f"worker {s.worker_id}: speed {speeds[s.worker_id]:5.2f}, done at {s.total:7.2f}s, "
          f"{s.transmissions} transmission(s)")

print(f"\nfastest five: {[s.worker_id for s in fastest(samples, 5)]}")
print(f"task latency {latency:.2f}s vs waiting for everyone {task_latency(samples, 8):.2f}s")
print(f"relative error of the decoded result: {np.linalg.norm(y - task.direct()) / np.linalg.norm(task.direct()):.1e}")
