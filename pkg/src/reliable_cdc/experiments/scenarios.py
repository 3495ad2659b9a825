"""Scenario runners. Each returns named tables of rows plus free-form notes."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .. import cdc
from ..errors import NonConcaveDetected, NonPositiveA
from ..ledger import (
    ChainedLedger,
    ChainId,
    ReputationUpdate,
    ResourceInteraction,
    composite_from_history,
    latest_opinions,
    measure_throughput,
)
from ..reputation import (
    InteractionCounts,
    Opinion,
    local_opinion,
    record_task_outcome,
    reputation_value,
)
from ..stackelberg import GameWorker, StackelbergGame
from .config import ScenarioConfig
from .population import REQUESTER, build_population, record_history, select_coalition


@dataclass
class ScenarioResult:
    tables: dict = field(default_factory=dict)  # name -> list of row dicts
    notes: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)  # in-memory objects, not written as CSV


def _solve(game: StackelbergGame):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConcaveDetected)
        return game.solve()


def _mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values)


def _clip_rep(r: float, cfg: ScenarioConfig) -> float:
    return min(max(r, cfg.rep_min), cfg.rep_max)


# -- reputation attack ---------------------------------------------------------


def run_reputation_attack(cfg: ScenarioConfig) -> ScenarioResult:
    """An unreliable worker builds reputation, waits, then misbehaves.

    The worker serves every MSP once per round. It is always well behaved toward
    the favored MSPs 1..n_favored and, once the attack starts, misbehaves toward
    the rest with probability ``misbehave_prob``. An honest worker serving the
    same MSPs is tracked alongside.

    Views per scheme: ``Proposed`` is the composite opinion of MSP 0 (not
    favored) computed from the reputation chain; ``NoBlockchain`` is the same
    view over a central store that turns negative events positive with
    probability ``manipulation_prob``; ``NoBlockchainNoRec`` is the local
    opinion of favored MSP 1 alone.
    """
    params = cfg.reputation_params()
    P = cfg.n_msps
    if P < 2 or cfg.n_favored < 1:
        raise ValueError("the attack scenario needs n_msps >= 2 and n_favored >= 1")
    favored = set(range(1, cfg.n_favored + 1))
    favored_view = 1
    target, honest = 0, 1
    rng_bg = np.random.default_rng([cfg.seed, 10])
    rng_act = np.random.default_rng([cfg.seed, 11])
    rng_man = np.random.default_rng([cfg.seed, 12])

    chain = ChainedLedger(ChainId.REPUTATION, cfg.block_size)
    central: dict[tuple[int, int], Opinion] = {}
    clock = 0
    # Background ratings give each MSP a service history, hence social ties.
    for msp in range(P):
        for b in range(2, 2 + cfg.n_background):
            if rng_bg.random() < 0.6:
                c = InteractionCounts(int(rng_bg.integers(1, 11)), int(rng_bg.integers(0, 3)))
                op = local_opinion(c, params)
                chain.append_tx(ReputationUpdate(msp=msp, worker=b, opinion=op, submitted_at=clock))
                central[(msp, b)] = op
    clock += 1000
    chain.seal_all(clock)

    true_counts = {(m, w): InteractionCounts() for m in range(P) for w in (target, honest)}
    central_counts = dict(true_counts)
    rows: list[dict] = []
    interactions = 0

    def views(worker: int) -> dict:
        chain_ops = latest_opinions(chain)
        return {
            "Proposed": reputation_value(composite_from_history(chain_ops, REQUESTER, worker), params.gamma),
            "NoBlockchain": reputation_value(composite_from_history(central, REQUESTER, worker), params.gamma),
            "NoBlockchainNoRec": reputation_value(
                local_opinion(true_counts[(favored_view, worker)], params), params.gamma
            ),
        }

    def emit(rnd: int, phase: str) -> dict:
        out = {}
        for label, worker in (("unreliable", target), ("honest", honest)):
            v = views(worker)
            out[label] = v
            for scheme, value in v.items():
                rows.append(
                    {
                        "round": rnd,
                        "phase": phase,
                        "interactions": interactions,
                        "worker": label,
                        "scheme": scheme,
                        "observer_msp": favored_view if scheme == "NoBlockchainNoRec" else REQUESTER,
                        "reputation": value,
                    }
                )
        return out

    def play_round(attacking: bool) -> None:
        nonlocal clock, interactions
        clock += 1000
        for msp in range(P):
            for worker in (target, honest):
                good = True
                if worker == target and attacking and msp not in favored:
                    good = rng_act.random() >= cfg.misbehave_prob
                key = (msp, worker)
                true_counts[key] = record_task_outcome(true_counts[key], good)
                op = local_opinion(true_counts[key], params)
                chain.append_tx(ReputationUpdate(msp=msp, worker=worker, opinion=op, submitted_at=clock))
                reported = good or rng_man.random() < cfg.manipulation_prob
                central_counts[key] = record_task_outcome(central_counts[key], reported)
                central[key] = local_opinion(central_counts[key], params)
            interactions += 1
        chain.seal_all(clock)

    rnd = 0
    emit(rnd, "start")
    while views(target)["Proposed"] < cfg.attack_target:
        if rnd >= 1000:
            raise RuntimeError("reputation never reached the attack target")
        rnd += 1
        play_round(False)
        emit(rnd, "ramp")
    ramp_end = rnd
    for _ in range(cfg.attack_hold_rounds):
        rnd += 1
        emit(rnd, "hold")
    onset = rnd + 1
    first_below = None
    for _ in range(cfg.attack_rounds):
        rnd += 1
        play_round(True)
        v = emit(rnd, "attack")["unreliable"]
        if first_below is None and v["Proposed"] < params.rep_threshold:
            first_below = rnd
    return ScenarioResult(
        tables={"attack": rows},
        notes={
            "ramp_rounds": ramp_end,
            "attack_onset_round": onset,
            "first_round_below_threshold": first_below,
            "threshold": params.rep_threshold,
        },
        artifacts={"reputation_chain": chain, "true_counts": true_counts},
    )


# -- misbehavior sweep -------------------------------------------------------


def run_misbehavior_sweep(cfg: ScenarioConfig) -> ScenarioResult:
    """Average reputation of the selected coalition's workers across m_r, sigma1 and preference order.

    All cells share one population draw so that only the swept parameter changes.
    """
    rows = []
    for s1 in cfg.sigma1_grid:
        params = cfg.reputation_params(s1)
        for mr in cfg.mr_grid:
            pop = build_population(cfg, mr, [cfg.seed, 2])
            population_avg = None
            for pref in cfg.preference_grid:
                chains = record_history(pop, params, cfg)
                sel = select_coalition(chains, cfg, params, pref)
                reps = [r for _, r in sel.coalition_workers]
                population_avg = _mean(sel.reputations.values())
                bad = pop.malicious_ids()
                rows.append(
                    {
                        "misbehavior_ratio": mr,
                        "sigma1": s1,
                        "preference": pref,
                        "avg_selected_reputation": _mean(reps) if reps else math.nan,
                        "n_selected": len(reps),
                        "n_selected_unreliable": sum(1 for w, _ in sel.coalition_workers if w in bad),
                        "n_discarded": len(sel.discarded),
                        "population_avg_reputation": population_avg,
                        "coalition_miners": len(sel.formation.best),
                    }
                )
    return ScenarioResult(tables={"misbehavior": rows})


# -- task amount sweep ---------------------------------------------------------


def _selected_workers(cfg: ScenarioConfig, mr: float, seed) -> tuple:
    params = cfg.reputation_params()
    pop = build_population(cfg, mr, seed)
    sel = select_coalition(record_history(pop, params, cfg), cfg, params)
    return pop, sel


def run_task_amount_sweep(cfg: ScenarioConfig) -> ScenarioResult:
    """Equilibrium per (N, K) variant and task amount, with per-worker load amount / K."""
    pop, sel = _selected_workers(cfg, 0.0, [cfg.seed, 5])
    rows = []
    n_max = max(n for n, _ in cfg.nk_variants)
    ranked = sel.pick(n_max)
    for n, k in cfg.nk_variants:
        workers = [GameWorker(pop.counts(REQUESTER, w), _clip_rep(r, cfg), w) for w, r in ranked[:n]]
        for amount in cfg.task_amounts:
            row = {"task_amount": amount, "N": n, "K": k, "task_share": amount / k}
            try:
                game = StackelbergGame(
                    cfg.comm_model(), cfg.comp_model(amount / k), cfg.incentive_params(), workers, k,
                    rep_params=cfg.reputation_params(),
                )
                sol = _solve(game)
            except NonPositiveA as exc:
                row.update(status="NonPositiveA", r_com_star=math.nan, msp_utility=math.nan,
                           mean_mu=math.nan, mean_worker_utility=math.nan, method="", detail=str(exc))
            else:
                row.update(
                    status="ok",
                    r_com_star=sol.r_com_star,
                    msp_utility=sol.leader_utility,
                    mean_mu=float(np.mean(sol.mu_star)),
                    mean_worker_utility=float(np.mean(sol.follower_utilities)),
                    method=sol.method,
                    detail="",
                )
            rows.append(row)
    return ScenarioResult(tables={"task_sweep": rows}, notes={"crossover": _k_crossover(rows)})


def _k_crossover(rows: list[dict]) -> dict:
    """Whether the K variant with the higher mean worker utility changes across amounts."""
    out = {}
    by_n: dict = {}
    for r in rows:
        if r["status"] == "ok":
            by_n.setdefault(r["N"], {}).setdefault(r["K"], {})[r["task_amount"]] = r["mean_worker_utility"]
    for n, per_k in by_n.items():
        ks = sorted(per_k)
        if len(ks) < 2:
            continue
        amounts = sorted(set.intersection(*(set(per_k[k]) for k in ks)))
        leaders = [max(ks, key=lambda k: per_k[k][a]) for a in amounts]
        changes = [amounts[i] for i in range(1, len(amounts)) if leaders[i] != leaders[i - 1]]
        out[str(n)] = {"best_k_by_amount": dict(zip(map(str, amounts), leaders)), "switches_at": changes}
    return out


# -- selection comparison ------------------------------------------------------


def _evaluate(cfg: ScenarioConfig, pop, chosen: list) -> dict:
    """Equilibrium and realised utilities for a chosen worker set.

    Unreliable workers add nothing to the MSP's valuation and their task is a
    negative event, so their reputation term is the lower bound C.
    """
    k = cfg.k
    workers = [GameWorker(pop.counts(REQUESTER, w), _clip_rep(r, cfg), w) for w, r in chosen]
    game = StackelbergGame(
        cfg.comm_model(), cfg.comp_model(cfg.task_amount / k), cfg.incentive_params(), workers, k,
        rep_params=cfg.reputation_params(),
    )
    sol = _solve(game)
    honest = np.array([pop.workers[w].honest for w, _ in chosen])
    msp = game.msp_utility(sol.r_com_star, contributes=honest)
    p = game.reward_probs(sol.mu_star)
    realised = np.where(honest, sol.follower_utilities, sol.follower_utilities - cfg.beta * p * (game.B - game.C))
    return {
        "r_com_star": sol.r_com_star,
        "msp_utility": float(msp),
        "mean_worker_utility": float(np.mean(realised)),
        "n_unreliable": int(np.sum(~honest)),
    }


def run_selection_comparison(cfg: ScenarioConfig) -> ScenarioResult:
    """Proposed selection versus uniform random selection, averaged over populations."""
    cells: dict = {}
    for t in range(cfg.selection_trials):
        for mi, mr in enumerate(cfg.selection_mr_grid):
            pop, sel = _selected_workers(cfg, mr, [cfg.seed, 3, t])
            for n in cfg.selection_n_grid:
                proposed = sel.pick(n)
                rng = np.random.default_rng([cfg.seed, 4, t, mi, n])
                picks = sorted(rng.choice(cfg.W, size=n, replace=False).tolist())
                random_sel = [(w, sel.reputations[w]) for w in picks]
                for scheme, chosen in (("Proposed", proposed), ("RandomSelection", random_sel)):
                    cells.setdefault((n, scheme, mr), []).append(_evaluate(cfg, pop, chosen))
    rows = []
    for (n, scheme, mr), vals in sorted(cells.items(), key=lambda kv: (kv[0][2], kv[0][0], kv[0][1])):
        rows.append(
            {
                "N": n,
                "scheme": scheme,
                "misbehavior_ratio": mr,
                "msp_utility": float(np.mean([v["msp_utility"] for v in vals])),
                "mean_worker_utility": float(np.mean([v["mean_worker_utility"] for v in vals])),
                "r_com_star": float(np.mean([v["r_com_star"] for v in vals])),
                "mean_unreliable_selected": float(np.mean([v["n_unreliable"] for v in vals])),
                "trials": len(vals),
            }
        )
    summary = []
    for mr in cfg.selection_mr_grid:
        gains_msp, gains_w = [], []
        for n in cfg.selection_n_grid:
            prop = cells[(n, "Proposed", mr)]
            rand = cells[(n, "RandomSelection", mr)]
            pm, rm = np.mean([v["msp_utility"] for v in prop]), np.mean([v["msp_utility"] for v in rand])
            pw, rw = (np.mean([v["mean_worker_utility"] for v in prop]),
                      np.mean([v["mean_worker_utility"] for v in rand]))
            gains_msp.append(100.0 * (pm - rm) / abs(rm))
            gains_w.append(100.0 * (pw - rw) / abs(rw))
        summary.append(
            {
                "misbehavior_ratio": mr,
                "max_msp_improvement_pct": float(max(gains_msp)),
                "reference_msp_improvement_pct": 24.0,
                "max_worker_improvement_pct": float(max(gains_w)),
                "reference_worker_improvement_pct": 57.0,
            }
        )
    return ScenarioResult(tables={"selection": rows, "selection_summary": summary})


# -- full protocol -------------------------------------------------------------


def run_full_protocol(cfg: ScenarioConfig) -> ScenarioResult:
    """One task through recruitment, selection, the incentive game, coded execution and updates."""
    params = cfg.reputation_params()
    trace: list[dict] = []

    def log(step: int, name: str, **detail) -> None:
        trace.append({"step": step, "name": name, "detail": json.dumps(detail, sort_keys=True)})

    pop = build_population(cfg, cfg.misbehavior_ratio, [cfg.seed, 6])
    chains = record_history(pop, params, cfg)
    log(0, "history", workers=cfg.W, msps=cfg.n_msps, reputation_txs=len(chains.reputation.transactions()))

    sel = select_coalition(chains, cfg, params, task_descriptor=f"matvec {cfg.task_rows}x{cfg.task_cols}")
    log(1, "recruitment", rep_threshold=params.rep_threshold)
    log(2, "reputation_query", request_id=sel.query.request_id, workers=len(sel.reputations))
    log(3, "discard", discarded=len(sel.discarded))
    log(4, "coalition", best=sorted(sel.formation.best), partition=sel.formation.partition.as_lists(),
        steps=len(sel.formation.trace))
    try:
        chosen = sel.pick(cfg.n)
    except ValueError as exc:
        raise ValueError(f"step 5: {exc}") from None
    log(5, "coalition_returned", workers=[w for w, _ in sel.coalition_workers])
    log(6, "worker_info", selected=[w for w, _ in chosen])

    rng = np.random.default_rng([cfg.seed, 7])
    task = cdc.CdcTask(
        rng.standard_normal((cfg.task_rows, cfg.task_cols)), rng.standard_normal(cfg.task_cols), cfg.k, cfg.n
    )
    share = task.block_rows * cfg.task_cols
    workers = [GameWorker(pop.counts(REQUESTER, w), _clip_rep(r, cfg), w) for w, r in chosen]
    game = StackelbergGame(cfg.comm_model(), cfg.comp_model(share), cfg.incentive_params(), workers, cfg.k,
                           rep_params=params)
    sol = _solve(game)
    y, latency, samples, _ = cdc.execute(task, sol.mu_star, cfg.comm_model(), cfg.comp_model(share),
                                         rng.integers(2**63))
    err = float(np.linalg.norm(y - task.direct()) / max(np.linalg.norm(task.direct()), 1e-300))
    winners = {s.worker_id for s in cdc.fastest(samples, cfg.k)}
    log(7, "allocation_and_execution", r_com_star=sol.r_com_star, method=sol.method, latency=latency,
        relative_error=err, winners=sorted(chosen[i][0] for i in winners))

    t = chains.tick()
    worker_rows = []
    updates = {}
    for i, (w, rep) in enumerate(chosen):
        good = pop.workers[w].honest
        reward = cfg.r_base + (sol.r_com_star if i in winners and good else 0.0)
        chains.resource.append_tx(
            ResourceInteraction(msp=REQUESTER, worker=w, task_id=cfg.seed, reward=reward, outcome=good, submitted_at=t)
        )
        before = pop.counts(REQUESTER, w)
        after = record_task_outcome(before, good)
        pop.workers[w].counts[REQUESTER] = after
        updates[w] = local_opinion(after, params)
        worker_rows.append(
            {
                "worker": w,
                "composite_reputation": rep,
                "honest": good,
                "mu_star": float(sol.mu_star[i]),
                "completion_time": samples[i].total,
                "in_fastest_k": i in winners,
                "reward": reward,
                "positive_after": after.positive,
                "negative_after": after.negative,
            }
        )
    log(8, "resource_records", payments=len(chosen))
    t = chains.tick()
    for w, op in updates.items():
        chains.reputation.append_tx(ReputationUpdate(msp=REQUESTER, worker=w, opinion=op, submitted_at=t))
    chains.seal()
    log(9, "reputation_updates", updated=len(updates),
        reputation_chain_ok=chains.reputation.verify_chain(), resource_chain_ok=chains.resource.verify_chain())
    return ScenarioResult(
        tables={"full_trace": trace, "full_workers": worker_rows},
        notes={"relative_error": err, "latency": latency, "r_com_star": sol.r_com_star},
        artifacts={"chains": chains, "population": pop, "task": task, "y": y},
    )


# -- ledger benchmark ----------------------------------------------------------


def run_ledger_bench(cfg: ScenarioConfig) -> ScenarioResult:
    rows = []
    for n in cfg.bench_n_txs:
        single = measure_throughput("single", n, cfg.service_time_per_tx, cfg.block_size)
        double = measure_throughput("double", n, cfg.service_time_per_tx, cfg.block_size)
        for res in (single, double):
            rows.append(
                {
                    "config": res.config,
                    "n_txs": n,
                    "throughput_tps": res.throughput,
                    "avg_latency_s": res.avg_latency,
                    "makespan_s": res.makespan,
                    "throughput_ratio_vs_single": res.throughput / single.throughput,
                }
            )
    return ScenarioResult(tables={"ledger_bench": rows})


SCENARIOS = {
    "attack": run_reputation_attack,
    "misbehavior": run_misbehavior_sweep,
    "task-sweep": run_task_amount_sweep,
    "selection": run_selection_comparison,
    "full": run_full_protocol,
    "ledger-bench": run_ledger_bench,
}
