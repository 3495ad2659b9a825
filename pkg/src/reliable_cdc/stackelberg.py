"""One-leader / N-follower incentive game between an MSP and its CDC workers.

Workers choose a computation speed ``mu`` trading off the competition reward
(won with probability ``1 - exp(-mu A)``), energy cost, and their expected
post-task reputation. The MSP picks the competition reward anticipating each
worker's closed-form best response ``E ln(F R + G_w)``.

The analytic model uses the mean computation time ``l exp(a mu) / mu`` (the
density integrated from zero) because the closed-form best response depends on
it. The execution simulator in :mod:`reliable_cdc.cdc` samples the proper
shifted exponential instead.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidOrder, NonConcaveDetected, NonPositiveA, OutOfDomain
from .reputation import InteractionCounts, ReputationParams


@dataclass(frozen=True)
class CommModel:
    """Uplink model: rate ``eta`` (bit/s/Hz), erasure probability, bandwidth, result size."""

    data_rate: float = 1300.0
    erasure_prob: float = 0.1
    bandwidth: float = 1e5
    packet_size_bits: float = 3200.0

    def __post_init__(self) -> None:
        if self.data_rate <= 0 or self.bandwidth <= 0:
            raise ValueError("data_rate and bandwidth must be positive")
        if not 0.0 <= self.erasure_prob < 1.0:
            raise ValueError("erasure_prob must lie in [0, 1)")


@dataclass(frozen=True)
class CompModel:
    """Shifted-exponential computation model with speed bounds."""

    startup: float = 5e-4
    task_share: float = 100.0
    mu_min: float = 1.0
    mu_max: float = 1000.0

    def __post_init__(self) -> None:
        if self.startup <= 0 or self.task_share <= 0:
            raise ValueError("startup and task_share must be positive")
        if not 0.0 < self.mu_min < self.mu_max:
            raise ValueError("require 0 < mu_min < mu_max")


@dataclass(frozen=True)
class IncentiveParams:
    """Reward bounds, cost rates and utility scales.

    ``t_max`` is the deadline normalising execution times; ``None`` derives it
    as ``t_max_factor * (a l + l / mu_min + uplink delay)``.
    """

    r_base: float = 10.0
    r_com_min: float = 0.0
    r_com_max: float = 1000.0
    comp_cost: float = 0.1
    comm_cost: float = 10.0
    xi: float = 10.0
    beta: float = 30.0
    nu: float = 10.0
    alpha: float = 0.5
    t_max: float | None = None
    t_max_factor: float = 1.2

    def __post_init__(self) -> None:
        if not self.r_com_min < self.r_com_max:
            raise ValueError("require r_com_min < r_com_max")
        if self.r_com_min < 0:
            raise ValueError("r_com_min must be nonnegative")
        for name in ("comp_cost", "xi", "beta", "nu"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")


@dataclass(frozen=True)
class BestResponseTerms:
    A: float
    E: float
    F: float
    G: float
    B: float
    C: float


@dataclass(frozen=True)
class GameWorker:
    """A selected worker as seen by the MSP: its local counts and composite reputation."""

    counts: InteractionCounts
    reputation: float
    worker_id: object = None


@dataclass
class EquilibriumSolution:
    r_com_star: float
    mu_star: np.ndarray
    leader_utility: float
    follower_utilities: np.ndarray
    interior_flags: np.ndarray
    method: str = "bisection"
    iterations: int = 0


# -- delay / computation models ---------------------------------------------


def expected_uplink_delay(comm: CommModel, n_workers: int) -> float:
    if n_workers < 1:
        raise ValueError("n_workers must be >= 1")
    return comm.packet_size_bits * n_workers / (
        (1.0 - comm.erasure_prob) * comm.data_rate * comm.bandwidth
    )


def expected_comp_time(comp: CompModel, mu):
    return comp.task_share * np.exp(comp.startup * mu) / mu


def expected_kth_order_stat(k: int, n: int) -> float:
    """Mean of the k-th smallest of n iid Uniform(0, 1) draws."""
    if not 1 <= k <= n:
        raise InvalidOrder(f"need 1 <= k <= n, got k={k}, n={n}")
    return k / (n + 1)


def resolve_t_max(comm: CommModel, comp: CompModel, inc: IncentiveParams, n: int) -> float:
    if inc.t_max is not None:
        return float(inc.t_max)
    l, a = comp.task_share, comp.startup
    return inc.t_max_factor * (a * l + l / comp.mu_min + expected_uplink_delay(comm, n))


# -- follower side -------------------------------------------------------------


def reputation_bounds(counts: InteractionCounts, rep: ReputationParams) -> tuple[float, float]:
    """Local reputation after one more positive (B) or negative (C) event."""
    s1, s2, g = rep.sigma1, rep.sigma2, rep.gamma
    p, q = counts.positive, counts.negative
    b = (s1 * (p + 1) + 2 * g) / (s1 * (p + 1) + s2 * q + 2)
    c = (s1 * p + 2 * g) / (s1 * p + s2 * (q + 1) + 2)
    return b, c


def derive_terms(
    comm: CommModel,
    comp: CompModel,
    inc: IncentiveParams,
    counts_w: InteractionCounts,
    rep_params: ReputationParams,
    k: int,
    n: int,
) -> BestResponseTerms:
    l, a = comp.task_share, comp.startup
    t_max = resolve_t_max(comm, comp, inc, n)
    A = (expected_kth_order_stat(k, n) * t_max - expected_uplink_delay(comm, n)) / l - a
    if A <= 0:
        raise NonPositiveA(
            f"A={A:.6g} <= 0 for k={k}, n={n}, l={l}, t_max={t_max:.6g}; "
            "loosen the deadline or reduce the per-worker load"
        )
    B, C = reputation_bounds(counts_w, rep_params)
    denom = inc.comp_cost * l * a
    return BestResponseTerms(
        A=A,
        E=1.0 / (a + A),
        F=A / denom,
        G=inc.beta * A * (B - C) / (inc.xi * denom),
        B=B,
        C=C,
    )


def reward_probability(mu, terms: BestResponseTerms):
    return -np.expm1(-np.asarray(mu, dtype=float) * terms.A)


def worker_profit(mu, r_com, comm, comp, inc, terms: BestResponseTerms, n: int):
    cost = inc.comp_cost * mu * expected_comp_time(comp, mu)
    return (
        inc.r_base
        + reward_probability(mu, terms) * r_com
        - cost
        - inc.comm_cost * expected_uplink_delay(comm, n)
    )


def expected_new_local_reputation(counts, rep_params: ReputationParams, p_w):
    B, C = reputation_bounds(counts, rep_params)
    return p_w * B + (1.0 - p_w) * C


def worker_utility(mu, r_com, comm, comp, inc, terms, n, counts, rep_params):
    p_w = reward_probability(mu, terms)
    return inc.xi * worker_profit(mu, r_com, comm, comp, inc, terms, n) + inc.beta * (
        expected_new_local_reputation(counts, rep_params, p_w)
    )


def worker_utility_gradient(mu, r_com, comp, inc, terms):
    """First derivative of the worker utility in ``mu``."""
    A, a, l = terms.A, comp.startup, comp.task_share
    decay = np.exp(-mu * A)
    return inc.xi * (r_com * A * decay - inc.comp_cost * l * a * np.exp(a * mu)) + (
        inc.beta * A * decay * (terms.B - terms.C)
    )


def worker_utility_curvature(mu, r_com, comp, inc, terms):
    """Second derivative of the worker utility in ``mu``; always negative."""
    A, a, l = terms.A, comp.startup, comp.task_share
    decay = np.exp(-mu * A)
    return -inc.xi * (A**2 * decay * r_com + inc.comp_cost * l * a**2 * np.exp(a * mu)) - (
        inc.beta * A**2 * decay * (terms.B - terms.C)
    )


def worker_best_response(r_com, terms: BestResponseTerms, comp: CompModel):
    x = terms.F * np.asarray(r_com, dtype=float) + terms.G
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = np.where(x > 0, terms.E * np.log(np.where(x > 0, x, 1.0)), -np.inf)
    mu = np.clip(raw, comp.mu_min, comp.mu_max)
    return float(mu) if mu.ndim == 0 else mu


# -- leader side ---------------------------------------------------------------


def reputation_weight(t_com, rep_params: ReputationParams, inc: IncentiveParams):
    """Piecewise MSP valuation of a worker's composite reputation.

    Exponential decay below the threshold, logarithmic rise above it, equal to
    ``alpha`` at the threshold and to 1 at the maximum reputation.
    """
    t = np.asarray(t_com, dtype=float)
    lo, th, hi = rep_params.rep_min, rep_params.rep_threshold, rep_params.rep_max
    if np.any(t < lo - 1e-12) or np.any(t > hi + 1e-12):
        raise OutOfDomain(f"reputation outside [{lo}, {hi}]")
    alpha = inc.alpha
    span = hi - th
    with np.errstate(divide="ignore", invalid="ignore"):
        vs = (math.e - 1.0) * (t - th) / span if span > 0 else np.zeros_like(t)
        upper = alpha + (1.0 - alpha) * np.log1p(np.maximum(vs, 0.0))
    lower = alpha * np.exp(t - th)
    out = np.where(t >= th, upper, lower)
    return float(out) if out.ndim == 0 else out


class StackelbergGame:
    """The MSP and a fixed set of N selected workers with recovery threshold K.

    All leader quantities accept scalar or array rewards.
    """

    def __init__(
        self,
        comm: CommModel,
        comp: CompModel,
        inc: IncentiveParams,
        workers: Sequence[GameWorker],
        k: int,
        n: int | None = None,
        rep_params: ReputationParams = ReputationParams(),
    ):
        n = len(workers) if n is None else n
        if len(workers) != n:
            raise ValueError(f"expected {n} workers, got {len(workers)}")
        if not 1 <= k <= n:
            raise InvalidOrder(f"need 1 <= k <= n, got k={k}, n={n}")
        self.comm, self.comp, self.inc, self.rep_params = comm, comp, inc, rep_params
        self.workers = list(workers)
        self.k, self.n = k, n
        self.t_max = resolve_t_max(comm, comp, inc, n)
        self.uplink_delay = expected_uplink_delay(comm, n)
        self.terms = [derive_terms(comm, comp, inc, w.counts, rep_params, k, n) for w in workers]
        t0 = self.terms[0]
        self.A, self.E, self.F = t0.A, t0.E, t0.F
        self.G = np.array([t.G for t in self.terms])
        self.B = np.array([t.B for t in self.terms])
        self.C = np.array([t.C for t in self.terms])
        self.h = np.asarray(
            reputation_weight([w.reputation for w in workers], rep_params, inc), dtype=float
        ).reshape(n)

    # follower quantities, shape (..., n)
    def _x(self, r):
        return self.F * np.asarray(r, dtype=float)[..., None] + self.G

    def raw_response(self, r):
        x = self._x(r)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(x > 0, self.E * np.log(np.where(x > 0, x, 1.0)), -np.inf)

    def best_responses(self, r):
        return np.clip(self.raw_response(r), self.comp.mu_min, self.comp.mu_max)

    def interior(self, r):
        raw = self.raw_response(r)
        return (raw > self.comp.mu_min) & (raw < self.comp.mu_max)

    def reward_probs(self, mu):
        return -np.expm1(-np.asarray(mu) * self.A)

    def worker_utilities(self, mu, r):
        """Utility of every worker at speeds ``mu`` (shape (..., n)) and reward ``r``."""
        inc, comp = self.inc, self.comp
        mu = np.asarray(mu, dtype=float)
        r = np.asarray(r, dtype=float)[..., None] if np.ndim(r) else float(r)
        p = self.reward_probs(mu)
        profit = (
            inc.r_base
            + p * r
            - inc.comp_cost * comp.task_share * np.exp(comp.startup * mu)
            - inc.comm_cost * self.uplink_delay
        )
        return inc.xi * profit + inc.beta * (p * self.B + (1.0 - p) * self.C)

    # leader quantities
    def msp_utility(self, r, contributes=None):
        """MSP utility with followers at their best response.

        ``contributes`` optionally masks workers whose output is worthless
        (their speed adds nothing to the valuation term).
        """
        mu = self.best_responses(r)
        value = np.log1p(mu) * self.h
        if contributes is not None:
            value = value * np.asarray(contributes, dtype=float)
        r_arr = np.asarray(r, dtype=float)
        out = (
            self.inc.nu * value.sum(axis=-1)
            - self.n * self.inc.r_base
            - self.reward_probs(mu).sum(axis=-1) * r_arr
        )
        return float(out) if out.ndim == 0 else out

    def msp_marginal(self, r):
        """Analytic derivative of :meth:`msp_utility` in the reward.

        Clamped followers contribute no speed sensitivity.
        """
        r_arr = np.asarray(r, dtype=float)
        x = self._x(r_arr)
        mu = self.best_responses(r_arr)
        inner = self.interior(r_arr)
        dmu = np.where(inner, self.E * self.F / np.where(inner, x, 1.0), 0.0)
        decay = np.exp(-mu * self.A)
        value = self.inc.nu * (self.h * dmu / (1.0 + mu)).sum(axis=-1)
        pay = ((1.0 - decay) + r_arr[..., None] * self.A * decay * dmu).sum(axis=-1)
        out = value - pay
        return float(out) if out.ndim == 0 else out

    def msp_curvature(self, r):
        """Analytic second derivative of :meth:`msp_utility` (interior followers)."""
        r_arr = np.asarray(r, dtype=float)
        x = self._x(r_arr)
        inner = self.interior(r_arr)
        E, F, A = self.E, self.F, self.A
        xs = np.where(inner, x, 1.0)
        lnx = np.log(xs)
        g2 = -E * F**2 * (1.0 + E * lnx + E) / (xs**2 * (1.0 + E * lnx) ** 2)
        ea = E * A
        pay2 = 2 * ea * F * xs ** (-ea - 1) - r_arr[..., None] * ea * F**2 * (ea + 1) * xs ** (-ea - 2)
        out = np.where(inner, self.inc.nu * self.h * g2 - pay2, 0.0).sum(axis=-1)
        return float(out) if out.ndim == 0 else out

    def breakpoints(self) -> np.ndarray:
        """Rewards inside the interval where some follower enters or leaves a speed bound."""
        lo, hi = self.inc.r_com_min, self.inc.r_com_max
        pts = []
        for bound in (self.comp.mu_min, self.comp.mu_max):
            with np.errstate(over="ignore"):
                r = (np.exp(bound / self.E) - self.G) / self.F
            pts.extend(r[(r > lo) & (r < hi)].tolist())
        return np.unique(np.asarray(pts, dtype=float))

    def concavity_violations(self, samples: int = 257, tol: float = 1e-9) -> int:
        """Count concavity failures of the leader utility on the reward interval.

        Combines sampled second differences with upward jumps of the marginal
        at follower clamp breakpoints, which a coarse grid can step over.
        """
        grid = np.linspace(self.inc.r_com_min, self.inc.r_com_max, samples)
        u = self.msp_utility(grid)
        d2 = u[:-2] - 2 * u[1:-1] + u[2:]
        scale = max(1.0, float(np.max(np.abs(u))))
        count = int(np.sum(d2 > tol * scale))
        for b in self.breakpoints():
            eps = 1e-9 * max(1.0, abs(b))
            if self.msp_marginal(b + eps) - self.msp_marginal(b - eps) > tol * scale:
                count += 1
        return count

    def solve(self, tol: float = 1e-8, max_iter: int = 200) -> EquilibriumSolution:
        """Maximise the leader utility over the reward interval.

        Bisection on the analytic marginal when the utility is concave. When the
        concavity check fails, a :class:`NonConcaveDetected` warning is issued and
        each smooth piece between clamp breakpoints is bisected separately, the
        best piece winning.
        """
        lo, hi = self.inc.r_com_min, self.inc.r_com_max
        if not self.concavity_violations():
            r_star, it = self._bisect(lo, hi, tol, max_iter)
            method = "bisection" if lo < r_star < hi else "endpoint"
            return self._solution(r_star, method, it)
        warnings.warn(
            "leader utility is not concave on the reward interval; "
            "maximising piecewise between follower clamp breakpoints",
            NonConcaveDetected,
            stacklevel=2,
        )
        edges = [lo, *self.breakpoints().tolist(), hi]
        best, best_u, total_it = lo, -np.inf, 0
        for a, b in zip(edges[:-1], edges[1:]):
            r, it = self._bisect(a, b, tol, max_iter)
            total_it += it
            u = self.msp_utility(r)
            if u > best_u:
                best, best_u = r, u
        return self._solution(best, "piecewise", total_it)

    def _bisect(self, lo: float, hi: float, tol: float, max_iter: int) -> tuple[float, int]:
        pad = 1e-12 * max(1.0, hi - lo)
        if self.msp_marginal(lo + pad) <= 0.0:
            return lo, 0
        if self.msp_marginal(hi - pad) >= 0.0:
            return hi, 0
        it = 0
        while hi - lo > tol and it < max_iter:
            mid = 0.5 * (lo + hi)
            if self.msp_marginal(mid) > 0.0:
                lo = mid
            else:
                hi = mid
            it += 1
        return 0.5 * (lo + hi), it

    def _solution(self, r_star: float, method: str, iterations: int) -> EquilibriumSolution:
        r_star = float(min(max(r_star, self.inc.r_com_min), self.inc.r_com_max))
        mu = self.best_responses(r_star)
        return EquilibriumSolution(
            r_com_star=r_star,
            mu_star=mu,
            leader_utility=self.msp_utility(r_star),
            follower_utilities=self.worker_utilities(mu, r_star),
            interior_flags=self.interior(r_star),
            method=method,
            iterations=iterations,
        )

    def deviation_gains(self, sol: EquilibriumSolution, n_alternatives: int = 1000):
        """Largest gain any single player gets by deviating to a grid alternative.

        Returns ``(leader_gain, follower_gains)``; the leader deviates with
        followers re-optimising, each follower deviates with the reward and the
        other speeds held fixed.
        """
        r_grid = np.linspace(self.inc.r_com_min, self.inc.r_com_max, n_alternatives)
        leader_gain = float(np.max(self.msp_utility(r_grid)) - sol.leader_utility)
        mu_grid = np.linspace(self.comp.mu_min, self.comp.mu_max, n_alternatives)
        alt = self.worker_utilities(np.repeat(mu_grid[:, None], self.n, axis=1), sol.r_com_star)
        follower_gains = alt.max(axis=0) - sol.follower_utilities
        return leader_gain, follower_gains

    def diagnostics(self, n_points: int = 101) -> list[tuple[float, float, float]]:
        """``(reward, utility, marginal)`` triples over the reward interval."""
        grid = np.linspace(self.inc.r_com_min, self.inc.r_com_max, n_points)
        return list(zip(grid.tolist(), self.msp_utility(grid).tolist(), self.msp_marginal(grid).tolist()))


def msp_utility(r_com, comm, comp, inc, worker_data, k, n, rep_params=ReputationParams()):
    return StackelbergGame(comm, comp, inc, worker_data, k, n, rep_params).msp_utility(r_com)


def solve_equilibrium(
    comm, comp, inc, worker_data, k, n=None, rep_params=ReputationParams(), tol=1e-8
) -> EquilibriumSolution:
    return StackelbergGame(comm, comp, inc, worker_data, k, n, rep_params).solve(tol=tol)


def write_diagnostics_csv(game: StackelbergGame, path, n_points: int = 101) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["r_com", "msp_utility", "msp_marginal"])
        for row in game.diagnostics(n_points):
            w.writerow([repr(v) for v in row])
