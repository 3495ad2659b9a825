"""
One task end to end
===================

Recruitment, reputation query, coalition formation, the incentive game, coded
execution, payments and reputation updates, each leaving ledger records.
"""

import json

from reliable_cdc.experiments import ScenarioConfig, run_full_protocol

res = run_full_protocol(ScenarioConfig(seed=1))
for row in res.tables["full_trace"]:
    detail = json.loads(row["detail"])
    short = {k: v for k, v in detail.items() if not isinstance(v, list) or len(v) <= 10}
    print(f"step {row['step']}: {row['name']:<26} {short}")

print("\nselected workers:")
for w in res.tables["full_workers"]:
    print(f"  {w['worker']:3d} reputation {w['composite_reputation']:.3f} speed {w['mu_star']:.3f} "
          f"reward {w['reward']:.2f} {'(in fastest K)' if w['in_fastest_k'] else ''}")
chains = res.artifacts["chains"]
print(f"\nreputation chain: {len(chains.reputation.blocks)} blocks, resource chain: {len(chains.resource.blocks)} blocks")
