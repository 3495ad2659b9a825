"""Numbered acceptance criteria. Each test prints a PASS/FAIL line in the summary."""

import itertools
import time
import warnings

import numpy as np
import pytest
from scipy.stats import spearmanr

from helpers import random_follower, random_game
from reliable_cdc.cdc import CdcTask, decode_from_k, make_generator, shard_compute, split_encode
from reliable_cdc.coalition import form_coalitions, is_dhp_stable
from reliable_cdc.errors import AllWeightsZero, NonConcaveDetected
from reliable_cdc.experiments import (
    SCENARIOS,
    ScenarioConfig,
    run_full_protocol,
    run_ledger_bench,
    run_reputation_attack,
    run_selection_comparison,
    run_task_amount_sweep,
)
from reliable_cdc.experiments.cli import main
from reliable_cdc.ledger import ChainedLedger, latest_opinions, verify_records
from reliable_cdc.reputation import (
    InteractionCounts,
    Opinion,
    ReputationParams,
    fuse_opinions,
    local_opinion,
    recommender_weights,
    reputation_value,
)
from reliable_cdc.stackelberg import (
    worker_best_response,
    worker_utility,
    worker_utility_gradient,
)
from test_coalition import random_instance


@pytest.fixture
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConcaveDetected)
        yield


def richardson(f, x, h):
    d = lambda s: (f(x + s) - f(x - s)) / (2 * s)  # noqa: E731
    return (4 * d(h / 2) - d(h)) / 3


@pytest.mark.acceptance(1, "MDS decoding from every K-subset equals A x")
def test_mds_correctness(report):
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst, subsets = 0.0, 0
    for _ in range(100):
        n = int(rng.integers(2, 13))
        k = int(rng.integers(1, n))
        n_r, n_c = int(rng.integers(1, 65)), int(rng.integers(1, 33))
        task = CdcTask(rng.standard_normal((n_r, n_c)), rng.standard_normal(n_c), k, n)
        g = make_generator(n, k, seed=rng.integers(2**63))
        partial = {s.shard_index: shard_compute(s, task.vector) for s in split_encode(task, generator=g)}
        direct = task.direct()
        scale = max(np.linalg.norm(direct), 1e-300)
        for sub in itertools.combinations(range(1, n + 1), k):
            y = decode_from_k([(i, partial[i]) for i in sub], g, task.n_rows)
            worst = max(worst, np.linalg.norm(y - direct) / scale)
            subsets += 1
    elapsed = time.perf_counter() - start
    report(f"{subsets} subsets, max rel err {worst:.1e}, {elapsed:.1f}s")
    assert worst <= 1e-6
    assert elapsed < 10.0


@pytest.mark.acceptance(2, "Worker best response matches grid search; interior gradient is zero")
def test_best_response_oracle(report):
    rng = np.random.default_rng(102)
    start = time.perf_counter()
    step = 1e-4
    worst_cells, worst_grad, interior = 0.0, 0.0, 0
    for _ in range(50):
        comm, comp, inc, counts, params, terms, n = random_follower(rng)
        r = rng.uniform(0.0, 1000.0)
        mu = worker_best_response(r, terms, comp)
        grid = np.arange(comp.mu_min, comp.mu_max + step / 2, step)
        best = grid[np.argmax(worker_utility(grid, r, comm, comp, inc, terms, n, counts, params))]
        worst_cells = max(worst_cells, abs(best - mu) / step)
        if comp.mu_min < mu < comp.mu_max:
            interior += 1
            worst_grad = max(worst_grad, abs(worker_utility_gradient(mu, r, comp, inc, terms)))
    elapsed = time.perf_counter() - start
    report(f"max offset {worst_cells:.2f} cells, max |grad| {worst_grad:.1e} over {interior} interior, {elapsed:.1f}s")
    assert worst_cells <= 1.0
    assert interior > 0 and worst_grad <= 1e-9
    assert elapsed < 5.0


@pytest.mark.acceptance(3, "Analytic gradients match central finite differences")
def test_gradient_checks(report):
    rng = np.random.default_rng(103)
    worst_w, worst_l = 0.0, 0.0
    for _ in range(200):
        comm, comp, inc, counts, params, terms, n = random_follower(rng)
        r = rng.uniform(0.0, 1000.0)
        mu = rng.uniform(comp.mu_min, comp.mu_max)
        an = worker_utility_gradient(mu, r, comp, inc, terms)
        fd = richardson(lambda m: worker_utility(m, r, comm, comp, inc, terms, n, counts, params), mu, 1e-3 * mu)
        worst_w = max(worst_w, abs(fd - an) / abs(an))

        game = random_game(rng)
        edges = np.concatenate([[game.inc.r_com_min], game.breakpoints(), [game.inc.r_com_max]])
        while True:  # the leader utility is smooth only between clamp breakpoints
            R = rng.uniform(game.inc.r_com_min, game.inc.r_com_max)
            h = 1e-4 * max(1.0, R)
            if np.min(np.abs(edges - R)) > 4 * h:
                break
        an = game.msp_marginal(R)
        fd = richardson(game.msp_utility, R, h)
        worst_l = max(worst_l, abs(fd - an) / abs(an))
    report(f"worker {worst_w:.1e}, leader {worst_l:.1e}")
    assert worst_w <= 1e-6
    assert worst_l <= 1e-6


@pytest.mark.acceptance(4, "Equilibrium matches grid search and survives unilateral deviations")
def test_equilibrium(report, quiet):
    rng = np.random.default_rng(104)
    worst_cells, worst_gain, methods = 0.0, -np.inf, {}
    for _ in range(50):
        game = random_game(rng)
        sol = game.solve()
        methods[sol.method] = methods.get(sol.method, 0) + 1
        grid = np.linspace(game.inc.r_com_min, game.inc.r_com_max, 10**5 + 1)
        cell = grid[1] - grid[0]
        r_grid = grid[np.argmax(game.msp_utility(grid))]
        worst_cells = max(worst_cells, abs(r_grid - sol.r_com_star) / cell)
        leader_gain, follower_gains = game.deviation_gains(sol, n_alternatives=1000)
        worst_gain = max(worst_gain, leader_gain, float(follower_gains.max()))
    report(f"max offset {worst_cells:.2f} cells, max deviation gain {worst_gain:.1e}, methods {methods}")
    assert worst_cells <= 1.0
    assert worst_gain <= 1e-6


@pytest.mark.acceptance(5, "K-th order statistic of N uniforms has mean K/(N+1)")
def test_order_statistics(report):
    rng = np.random.default_rng(105)
    errors = []
    for k, n in [(1, 3), (5, 9), (9, 10)]:
        u = rng.random((100_000, n))
        emp = np.partition(u, k - 1, axis=1)[:, k - 1].mean()
        errors.append(abs(emp - k / (n + 1)) / (k / (n + 1)))
    report("rel errors " + ", ".join(f"{e:.2%}" for e in errors))
    assert max(errors) < 0.01


@pytest.mark.acceptance(6, "Merge-and-split output is D_hp stable; every step is an improvement")
def test_coalition_stability(report):
    rng = np.random.default_rng(106)
    start = time.perf_counter()
    steps = 0
    for i in range(50):
        pref = "pareto" if i % 2 == 0 else "coalition"
        assignments, cfg = random_instance(rng, int(rng.integers(1, 9)), pref)
        res = form_coalitions(assignments, cfg)
        assert is_dhp_stable(res.partition, assignments, cfg)
        for step in res.trace:
            steps += 1
            if pref == "coalition":
                assert step.total_after > step.total_before
            else:
                gains = [step.utilities_after[m] - step.utilities_before[m] for m in step.utilities_before]
                assert min(gains) >= 0.0 and max(gains) > 0.0
    elapsed = time.perf_counter() - start
    report(f"{steps} trace steps checked, {elapsed:.1f}s")
    assert elapsed < 30.0


@pytest.mark.acceptance(7, "Opinion algebra properties on 1e4 random cases")
def test_opinion_algebra(report):
    rng = np.random.default_rng(107)
    params = ReputationParams()
    failures = 0

    def opinion(min_u=0.0):
        u = rng.uniform(min_u, 1.0)
        b = rng.uniform() * (1.0 - u)
        return Opinion(b, max(0.0, 1.0 - u - b), u)

    for _ in range(10_000):
        p, q = (int(v) for v in rng.integers(0, 1000, 2))
        op = local_opinion(InteractionCounts(p, q), params)
        failures += not (abs(sum(op.as_tuple()) - 1) <= 1e-12 and min(op.as_tuple()) >= 0 and max(op.as_tuple()) <= 1)
        up = local_opinion(InteractionCounts(p + 1, q), params)
        down = local_opinion(InteractionCounts(p, q + 1), params)
        failures += not (up.belief > op.belief and reputation_value(up) > reputation_value(op))
        failures += not (down.disbelief > op.disbelief)

        a, b = opinion(1e-6), opinion(1e-6)
        fused = fuse_opinions(a, b)
        failures += not (abs(sum(fused.as_tuple()) - 1) <= 1e-9 and min(fused.as_tuple()) >= 0)
        for x, y in ((fuse_opinions(a, Opinion.vacuous()), a), (fuse_opinions(Opinion.vacuous(), a), a)):
            failures += not np.allclose(x.as_tuple(), y.as_tuple(), atol=1e-12)

        m = int(rng.integers(1, 6))
        ties = rng.uniform(0, 1, m) * (rng.random(m) < 0.8)
        ops = [opinion() for _ in range(m)]
        try:
            w = recommender_weights(ties.tolist(), ops)
        except AllWeightsZero:
            failures += any(t * (o.belief + o.disbelief) > 0 for t, o in zip(ties, ops))
        else:
            failures += not (abs(sum(w) - 1) <= 1e-12 and min(w) >= 0)
    report(f"{failures} failures")
    assert failures == 0


@pytest.mark.acceptance(8, "Attack: proposed view drops below threshold and stays at or under the local-only view")
def test_attack_scenario(report):
    cfg = ScenarioConfig()
    res = run_reputation_attack(cfg)
    onset = res.notes["attack_onset_round"]
    rows = [r for r in res.tables["attack"] if r["worker"] == "unreliable" and r["round"] >= onset]
    by_round: dict = {}
    for r in rows:
        by_round.setdefault(r["round"], {})[r["scheme"]] = r["reputation"]
    proposed = [v["Proposed"] for _, v in sorted(by_round.items())]
    local = [v["NoBlockchainNoRec"] for _, v in sorted(by_round.items())]
    report(f"onset round {onset}, first below {res.notes['first_round_below_threshold']}, "
           f"final {proposed[-1]:.3f} vs local-only {local[-1]:.3f}")
    assert min(proposed) < cfg.rep_threshold
    assert res.notes["first_round_below_threshold"] is not None
    assert all(p <= l for p, l in zip(proposed, local))


@pytest.mark.acceptance(9, "Selection: proposed scheme beats random selection at m_r = 0.2")
def test_selection_comparison(report):
    cfg = ScenarioConfig()
    res = run_selection_comparison(cfg)
    rows = [r for r in res.tables["selection"] if r["misbehavior_ratio"] == 0.2]
    cell = {(r["N"], r["scheme"]): r for r in rows}
    ns = sorted(cfg.selection_n_grid)
    summary = next(s for s in res.tables["selection_summary"] if s["misbehavior_ratio"] == 0.2)
    report(
        f"max MSP gain {summary['max_msp_improvement_pct']:.1f}% (reference 24%), "
        f"max worker gain {summary['max_worker_improvement_pct']:.1f}% (reference 57%)"
    )
    for n in ns:
        prop, rand = cell[(n, "Proposed")], cell[(n, "RandomSelection")]
        assert prop["msp_utility"] >= rand["msp_utility"] - 1e-9
        assert prop["mean_worker_utility"] >= rand["mean_worker_utility"] - 1e-9
    for key in ("msp_utility", "mean_worker_utility"):
        series = [cell[(n, "Proposed")][key] for n in ns]
        assert all(b > a for a, b in zip(series, series[1:])), key


@pytest.mark.acceptance(10, "Task sweep trends in amount, K and N (Spearman |rho| >= 0.9)")
def test_sweep_trends(report):
    cfg = ScenarioConfig()
    rows = run_task_amount_sweep(cfg).tables["task_sweep"]
    assert all(r["status"] == "ok" for r in rows)
    amounts = sorted(cfg.task_amounts)
    cell = {(r["N"], r["K"], r["task_amount"]): r for r in rows}
    rhos = {"R~amount": [], "R~K": [], "mu~amount": [], "mu~N": [], "U~amount": []}

    def rho(x, y):
        return spearmanr(x, y)[0]

    for n, k in cfg.nk_variants:
        series = [cell[(n, k, a)] for a in amounts]
        r_star = [c["r_com_star"] for c in series]
        assert all(b >= a for a, b in zip(r_star, r_star[1:]))
        rhos["R~amount"].append(rho(amounts, r_star))
        rhos["mu~amount"].append(rho(amounts, [c["mean_mu"] for c in series]))
        rhos["U~amount"].append(rho(amounts, [c["mean_worker_utility"] for c in series]))
    ks = sorted(k for n, k in cfg.nk_variants if n == 10)
    ns = sorted(n for n, k in cfg.nk_variants if k == 5)
    for a in amounts:
        rhos["R~K"].append(rho(ks, [cell[(10, k, a)]["r_com_star"] for k in ks]))
        rhos["mu~N"].append(rho(ns, [cell[(n, 5, a)]["mean_mu"] for n in ns]))
    report(", ".join(f"{name} {min(v, key=abs):+.2f}" for name, v in rhos.items()))
    assert min(rhos["R~amount"]) >= 0.9
    assert max(rhos["R~K"]) <= -0.9
    assert min(rhos["mu~amount"]) >= 0.9
    assert min(rhos["mu~N"]) >= 0.9
    assert max(rhos["U~amount"]) <= -0.9


@pytest.mark.acceptance(11, "Ledger: double chain doubles throughput, tampering detected, replay exact")
def test_ledger(report, tmp_path):
    rows = run_ledger_bench(ScenarioConfig()).tables["ledger_bench"]
    by = {(r["config"], r["n_txs"]): r for r in rows}
    ratios = []
    for n in ScenarioConfig().bench_n_txs:
        single, double = by[("single", n)], by[("double", n)]
        ratios.append(double["throughput_tps"] / single["throughput_tps"])
        assert abs(ratios[-1] - 2.0) <= 0.05
        assert double["avg_latency_s"] < single["avg_latency_s"]

    cfg = ScenarioConfig(seed=11)
    res = run_full_protocol(cfg)
    chains, pop = res.artifacts["chains"], res.artifacts["population"]
    rng = np.random.default_rng(111)
    detected = 0
    for chain in (chains.reputation, chains.resource):
        records = chain.to_records()
        for _ in range(500):
            i = int(rng.integers(len(records)))
            pos = int(rng.integers(len(records[i]) * 8))
            rec = bytearray(records[i])
            rec[pos // 8] ^= 1 << (pos % 8)
            detected += not verify_records(records[:i] + [bytes(rec)] + records[i + 1 :])

    chains.reputation.save(tmp_path / "reputation.ledger")
    replayed = latest_opinions(ChainedLedger.load(tmp_path / "reputation.ledger"))
    params = cfg.reputation_params()
    state = {(m, w.worker_id): local_opinion(c, params) for w in pop.workers for m, c in w.counts.items()}
    report(f"throughput ratios {', '.join(f'{r:.3f}' for r in ratios)}, {detected}/1000 flips detected, "
           f"{len(state)} opinions replayed")
    assert detected == 1000
    assert replayed == state


@pytest.mark.acceptance(12, "Every scenario writes byte-identical CSV files on rerun")
def test_determinism(report, tmp_path):
    checked = 0
    for name in sorted(SCENARIOS):
        outs = []
        for run in (1, 2):
            out = tmp_path / f"{name}-{run}"
            assert main(["run", name, "--seed", "42", "--out", str(out)]) == 0
            outs.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
        assert outs[0] and outs[0] == outs[1], name
        checked += len(outs[0])
    report(f"{len(SCENARIOS)} scenarios, {checked} CSV files compared")
