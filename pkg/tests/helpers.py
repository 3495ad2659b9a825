"""Random instance generators shared by the test modules."""

from __future__ import annotations

import numpy as np

from reliable_cdc.reputation import InteractionCounts, ReputationParams
from reliable_cdc.stackelberg import (
    CommModel,
    CompModel,
    GameWorker,
    IncentiveParams,
    StackelbergGame,
    derive_terms,
)


def random_game(rng: np.random.Generator, n_max: int = 10) -> StackelbergGame:
    """A feasible game with moderate scales drawn around the reference defaults."""
    n = int(rng.integers(2, n_max + 1))
    k = int(rng.integers(1, n))
    comm = CommModel(erasure_prob=float(rng.uniform(0.0, 0.3)))
    comp = CompModel(
        startup=float(rng.uniform(2e-4, 1e-3)),
        task_share=float(rng.uniform(50.0, 500.0)),
        mu_min=1.0,
        mu_max=float(rng.uniform(50.0, 1000.0)),
    )
    inc = IncentiveParams(
        r_com_max=float(rng.uniform(50.0, 1000.0)),
        comp_cost=float(rng.uniform(0.05, 0.2)),
        beta=float(rng.uniform(5.0, 50.0)),
        nu=float(rng.uniform(5.0, 50.0)),
        t_max=float(rng.uniform(200.0, 800.0)),
    )
    workers = [
        GameWorker(
            InteractionCounts(int(rng.integers(0, 30)), int(rng.integers(0, 5))),
            float(rng.uniform(0.6, 1.0)),
            i,
        )
        for i in range(n)
    ]
    return StackelbergGame(comm, comp, inc, workers, k)


def random_follower(rng: np.random.Generator):
    """Models, incentive params, counts and derived terms for one worker."""
    n = int(rng.integers(2, 12))
    k = int(rng.integers(1, n))
    comm = CommModel()
    comp = CompModel(
        startup=float(rng.uniform(2e-4, 1e-3)),
        task_share=float(rng.uniform(50.0, 500.0)),
        mu_min=1.0,
        mu_max=float(rng.uniform(20.0, 60.0)),
    )
    inc = IncentiveParams(
        comp_cost=float(rng.uniform(0.05, 0.2)),
        xi=float(rng.uniform(1.0, 20.0)),
        beta=float(rng.uniform(5.0, 50.0)),
        t_max=float(rng.uniform(200.0, 800.0)),
    )
    counts = InteractionCounts(int(rng.integers(0, 30)), int(rng.integers(0, 5)))
    params = ReputationParams()
    terms = derive_terms(comm, comp, inc, counts, params, k, n)
    return comm, comp, inc, counts, params, terms, n
