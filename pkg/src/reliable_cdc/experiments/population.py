"""Synthetic worker populations and the ledger-backed selection pipeline.

Each MSP has a history of interactions with each worker. Honest workers
misbehave rarely; unreliable ones misbehave with high probability toward every
MSP except a few favored ones, which may include the requesting MSP (MSP 0).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..coalition import FormationResult, assign_workers, form_coalitions
from ..ledger import (
    ChainedLedger,
    ChainId,
    CrossChainRequest,
    CrossChainResult,
    Recruitment,
    ReputationUpdate,
    WorkerRegistration,
    composite_reputation_handler,
    cross_chain_query,
)
from ..reputation import InteractionCounts, ReputationParams, local_opinion
from .config import ScenarioConfig

REQUESTER = 0


@dataclass
class WorkerProfile:
    worker_id: int
    honest: bool
    favored: tuple
    misbehave: np.ndarray  # per-MSP misbehavior probability
    counts: dict = field(default_factory=dict)  # msp -> InteractionCounts


@dataclass
class Population:
    workers: list[WorkerProfile]
    n_msps: int

    def malicious_ids(self) -> set[int]:
        return {w.worker_id for w in self.workers if not w.honest}

    def counts(self, msp: int, worker: int) -> InteractionCounts:
        return self.workers[worker].counts.get(msp, InteractionCounts())


def build_population(cfg: ScenarioConfig, misbehavior_ratio: float, seed) -> Population:
    """Draw a population; every random draw is independent of the ratio.

    Unreliable workers are a prefix of a fixed permutation, so raising the
    ratio only turns more of the same workers unreliable.
    """
    rng = np.random.default_rng(seed)
    W, P, T = cfg.W, cfg.n_msps, cfg.history_interactions
    order = rng.permutation(W)
    favored = [tuple(sorted(rng.choice(P, size=cfg.n_favored, replace=False).tolist()))
               if cfg.n_favored else () for _ in range(W)]
    n_int = rng.binomial(T, cfg.interaction_prob, size=(P, W))
    u = rng.random((P, W, T))
    bad = set(order[: int(round(misbehavior_ratio * W))].tolist())
    workers = []
    for w in range(W):
        q = np.full(P, cfg.honest_negative_prob)
        if w in bad:
            q[[i for i in range(P) if i not in favored[w]]] = cfg.misbehave_prob
        counts = {}
        for i in range(P):
            k = int(n_int[i, w])
            if k == 0:
                continue
            neg = int(np.sum(u[i, w, :k] < q[i]))
            counts[i] = InteractionCounts(k - neg, neg)
        workers.append(WorkerProfile(w, w not in bad, favored[w], q, counts))
    return Population(workers, P)


@dataclass
class Chains:
    reputation: ChainedLedger
    resource: ChainedLedger
    clock: int = 0

    def tick(self, dt: int = 1000) -> int:
        self.clock += dt
        return self.clock

    def seal(self) -> None:
        now = self.tick()
        for chain in (self.reputation, self.resource):
            if chain.pending:
                chain.seal_all(now)


def record_history(pop: Population, params: ReputationParams, cfg: ScenarioConfig) -> Chains:
    """Put registrations and every MSP's local opinions on fresh chains."""
    chains = Chains(
        ChainedLedger(ChainId.REPUTATION, cfg.block_size),
        ChainedLedger(ChainId.RESOURCE, cfg.block_size),
    )
    t = chains.tick()
    for w in pop.workers:
        reg = WorkerRegistration(worker=w.worker_id, metadata="online", submitted_at=t)
        chains.resource.append_tx(reg)
        chains.reputation.append_tx(reg)
        for msp, c in sorted(w.counts.items()):
            chains.reputation.append_tx(
                ReputationUpdate(msp=msp, worker=w.worker_id, opinion=local_opinion(c, params), submitted_at=t)
            )
    chains.seal()
    return chains


@dataclass
class Selection:
    reputations: dict  # worker -> composite reputation seen by the requester
    discarded: list
    formation: FormationResult
    coalition_workers: list  # (worker, reputation) in the best coalition
    query: CrossChainResult

    def pick(self, n: int) -> list:
        """Top ``n`` coalition workers by reputation.

        When the best coalition is too small, the remaining qualified workers
        fill the gap in reputation order. Raises ValueError if even that is short.
        """
        chosen = top_n(self.coalition_workers, n)
        if len(chosen) < n:
            inside = {w for w, _ in self.coalition_workers} | set(self.discarded)
            rest = [(w, r) for w, r in self.reputations.items() if w not in inside]
            chosen += top_n(rest, n - len(chosen))
        if len(chosen) < n:
            raise ValueError(f"only {len(chosen)} workers pass the reputation threshold, N={n} needed")
        return chosen


def select_coalition(
    chains: Chains,
    cfg: ScenarioConfig,
    params: ReputationParams,
    preference: str | None = None,
    task_descriptor: str = "",
) -> Selection:
    """Steps 1 to 5: recruit, query reputations, discard, form coalitions, return the best."""
    t = chains.tick()
    chains.resource.append_tx(
        Recruitment(msp=REQUESTER, rep_threshold=params.rep_threshold, task_descriptor=task_descriptor, submitted_at=t)
    )
    workers = tuple(sorted({tx.worker for tx in chains.resource.transactions(WorkerRegistration)}))
    request = CrossChainRequest(msp=REQUESTER, handler="composite_reputation", workers=workers, submitted_at=t)
    handlers = {"composite_reputation": composite_reputation_handler(params)}
    result = cross_chain_query(chains.resource, chains.reputation, request, handlers)
    reps = {int(w): v for w, v in result.data()["reputation"].items()}

    assignments, total, discarded = assign_workers(reps, cfg.M, params.rep_threshold)
    formation = form_coalitions(assignments, cfg.coalition_config(total, preference))
    by_miner = {a.miner_id: a for a in assignments}
    members = sorted(
        ((w, r) for m in formation.best for w, r in by_miner[m].workers), key=lambda wr: wr[0]
    )
    chosen = CrossChainResult(
        request_id=request.tx_id,
        payload=json.dumps(
            {"coalition": sorted(formation.best), "workers": {str(w): r for w, r in members}},
            sort_keys=True,
            separators=(",", ":"),
        ),
        submitted_at=chains.tick(),
    )
    chains.reputation.append_tx(chosen)
    chains.resource.append_tx(chosen)
    chains.seal()
    return Selection(reps, discarded, formation, members, result)


def top_n(members: list, n: int) -> list:
    """The ``n`` highest-reputation workers, ties broken by id."""
    return sorted(members, key=lambda wr: (-wr[1], wr[0]))[:n]
