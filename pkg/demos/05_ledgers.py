"""
Two chains and a cross-chain query
==================================

Reputation updates live on one chain and task records on another. The resource
chain asks the reputation chain for composite reputations, and a single flipped
bit anywhere in the stored blocks is caught.
"""

from reliable_cdc.ledger import (
    ChainedLedger,
    CrossChainRequest,
    ReputationUpdate,
    WorkerRegistration,
    cross_chain_query,
    measure_throughput,
    verify_records,
)
from reliable_cdc.reputation import InteractionCounts, ReputationParams, local_opinion

params = ReputationParams()
reputation = ChainedLedger("reputation")
resource = ChainedLedger("resource")

history = {(0, 1): (8, 1), (0, 2): (3, 3), (1, 1): (12, 0), (1, 2): (1, 6), (2, 1): (5, 0)}
for w in (1, 2):
    reputation.append_tx(WorkerRegistration(worker=w, metadata="online"))
for (msp, w), (p, q) in history.items():
    reputation.append_tx(ReputationUpdate(msp=msp, worker=w, opinion=local_opinion(InteractionCounts(p, q), params)))
reputation.seal_all(now=1_000)

result = cross_chain_query(resource, reputation, CrossChainRequest(msp=0, workers=(1, 2), submitted_at=2_000))
print("composite reputations seen by MSP 0:", result.data()["reputation"])

resource.seal_all(now=3_000)
reputation.seal_all(now=3_000)
print("chains verify:", reputation.verify_chain(), resource.verify_chain())

records = reputation.to_records()
tampered = bytearray(records[1])
tampered[40] ^= 0x01
print("after flipping one bit:", verify_records([records[0], bytes(tampered), *records[2:]]))

single, double = measure_throughput("single", 1000), measure_throughput("double", 1000)
print(f"throughput single {single.throughput:.0f} tx/s, double {double.throughput:.0f} tx/s; "
      f"latency {single.avg_latency:.3f}s vs {double.avg_latency:.3f}s")
