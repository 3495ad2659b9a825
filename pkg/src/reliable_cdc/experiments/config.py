"""Scenario configuration and its flat ``key = value`` text format.

Values are Python literals (numbers, strings, tuples, ``None``); ``#`` starts a
comment. Unknown keys are rejected so typos do not pass silently.
"""

from __future__ import annotations

import ast
import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable

from ..coalition import CoalitionConfig, Preference
from ..reputation import ReputationParams
from ..stackelberg import CommModel, CompModel, IncentiveParams

SCHEMES = ("Proposed", "NoBlockchain", "NoBlockchainNoRec", "RandomSelection")


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    scheme: str = "Proposed"

    # population
    W: int = 100
    M: int = 20
    n_msps: int = 10
    misbehavior_ratio: float = 0.2
    history_interactions: int = 10
    interaction_prob: float = 0.5
    honest_negative_prob: float = 0.05
    misbehave_prob: float = 0.9
    n_favored: int = 2

    # reputation
    sigma1: float = 0.6
    sigma2: float = 0.4
    gamma: float = 0.5
    rep_threshold: float = 0.6
    rep_max: float = 1.0
    rep_min: float = 0.0

    # coalition game
    delta: float = 1.0
    rho: float = 0.01
    o: float = 0.1
    preference: str = "pareto"

    # uplink and computation
    data_rate: float = 1300.0
    erasure_prob: float = 0.1
    bandwidth: float = 1e5
    packet_size_bits: float = 3200.0
    startup: float = 5e-4
    mu_min: float = 1.0
    mu_max: float = 1000.0

    # incentive game
    r_base: float = 10.0
    r_com_min: float = 0.0
    r_com_max: float = 1000.0
    comp_cost: float = 0.1
    comm_cost: float = 10.0
    xi: float = 10.0
    beta: float = 30.0
    nu: float = 10.0
    alpha: float = 0.5
    t_max: float | None = 500.0
    t_max_factor: float = 1.2

    # task
    n: int = 10
    k: int = 5
    task_amount: float = 1000.0
    task_rows: int = 40
    task_cols: int = 25

    # attack scenario
    attack_target: float = 0.8
    attack_hold_rounds: int = 5
    attack_rounds: int = 30
    manipulation_prob: float = 0.25
    n_background: int = 20

    # sweeps
    mr_grid: tuple = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
    sigma1_grid: tuple = (0.5, 0.6, 0.7, 0.8)
    preference_grid: tuple = ("pareto", "coalition")
    task_amounts: tuple = (500.0, 1000.0, 1500.0, 2000.0, 2500.0, 3000.0, 3500.0, 4000.0)
    nk_variants: tuple = ((10, 3), (10, 5), (10, 7), (15, 5), (20, 5))
    selection_n_grid: tuple = (10, 15, 20, 25, 30)
    selection_mr_grid: tuple = (0.0, 0.2)
    selection_trials: int = 5

    # ledger benchmark
    bench_n_txs: tuple = (100, 1000, 10000)
    service_time_per_tx: float = 1e-3
    block_size: int = 256

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        for name in ("misbehavior_ratio", "interaction_prob", "honest_negative_prob",
                     "misbehave_prob", "manipulation_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if any(not 0.0 <= m <= 1.0 for m in (*self.mr_grid, *self.selection_mr_grid)):
            raise ValueError("misbehavior ratios must lie in [0, 1]")
        if self.W < 1 or self.M < 1 or self.n_msps < 1:
            raise ValueError("W, M and n_msps must be positive")
        if not 0 <= self.n_favored < self.n_msps:
            raise ValueError("need 0 <= n_favored < n_msps")
        Preference(self.preference)
        # Build the module configs once so their invariants are checked up front.
        self.reputation_params()
        self.comm_model()
        self.comp_model(self.task_amount / self.k)
        self.incentive_params()

    def reputation_params(self, sigma1: float | None = None) -> ReputationParams:
        return ReputationParams(
            sigma1=self.sigma1 if sigma1 is None else sigma1,
            sigma2=self.sigma2,
            gamma=self.gamma,
            rep_threshold=self.rep_threshold,
            rep_max=self.rep_max,
            rep_min=self.rep_min,
        )

    def coalition_config(self, total_reputation_sum: float, preference: str | None = None) -> CoalitionConfig:
        return CoalitionConfig(
            total_miners=self.M,
            total_reputation_sum=total_reputation_sum,
            delta=self.delta,
            rho=self.rho,
            o=self.o,
            preference=Preference(self.preference if preference is None else preference),
        )

    def comm_model(self) -> CommModel:
        return CommModel(self.data_rate, self.erasure_prob, self.bandwidth, self.packet_size_bits)

    def comp_model(self, task_share: float) -> CompModel:
        return CompModel(self.startup, task_share, self.mu_min, self.mu_max)

    def incentive_params(self) -> IncentiveParams:
        return IncentiveParams(
            r_base=self.r_base,
            r_com_min=self.r_com_min,
            r_com_max=self.r_com_max,
            comp_cost=self.comp_cost,
            comm_cost=self.comm_cost,
            xi=self.xi,
            beta=self.beta,
            nu=self.nu,
            alpha=self.alpha,
            t_max=self.t_max,
            t_max_factor=self.t_max_factor,
        )

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


# Where each default comes from; emitted as comments by ``render_config``.
PARAM_NOTES = {
    "W": "number of workers (reference table)",
    "M": "number of miners (reference table)",
    "sigma1": "positive-event weight (reference table)",
    "sigma2": "negative-event weight (reference table)",
    "rep_threshold": "composite reputation threshold (reference table)",
    "gamma": "uncertainty coefficient; not published, maximum-entropy choice",
    "rep_max": "reputation upper bound; not published",
    "rep_min": "reputation lower bound; not published",
    "delta": "communication cost weight; not published",
    "rho": "per-worker computation cost; not published",
    "o": "barrier offset (reference text)",
    "data_rate": "uplink rate eta, bit/s/Hz (reference table)",
    "erasure_prob": "packet erasure probability (reference table)",
    "bandwidth": "uplink bandwidth, Hz (reference table)",
    "packet_size_bits": "result size, 400 B (reference table)",
    "startup": "shift parameter a (reference table)",
    "mu_min": "lowest speed; not published",
    "mu_max": "highest speed; not published",
    "r_base": "base reward (reference table)",
    "r_com_min": "lowest competition reward; not published",
    "r_com_max": "highest competition reward; not published",
    "comp_cost": "cost per CPU cycle epsilon (reference table)",
    "comm_cost": "cost per unit time zeta (reference table)",
    "xi": "worker profit scale (reference table)",
    "beta": "worker reputation scale (reference table)",
    "nu": "MSP valuation scale (reference table)",
    "alpha": "reputation function value at the threshold; not published",
    "t_max": "task deadline in seconds; not published, None derives it from t_max_factor",
    "misbehave_prob": "misbehavior probability toward non-favored MSPs (reference text)",
    "manipulation_prob": "centralized manipulation probability (reference text)",
    "attack_target": "reputation the unreliable worker builds before attacking (reference text)",
}


def render_config(cfg: ScenarioConfig | None = None) -> str:
    cfg = cfg or ScenarioConfig()
    lines = ["# Scenario configuration: key = python literal"]
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        note = PARAM_NOTES.get(f.name)
        line = f"{f.name} = {v!r}"
        lines.append(f"{line:<40} # {note}" if note else line)
    return "\n".join(lines) + "\n"


def parse_assignments(lines: Iterable[str], source: str = "<config>") -> dict:
    known = {f.name for f in fields(ScenarioConfig)}
    out = {}
    for lineno, raw in enumerate(lines, 1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ValueError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        if key not in known:
            raise ValueError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            out[key] = ast.literal_eval(value.strip())
        except (ValueError, SyntaxError):
            # Bare words are taken as strings, e.g. ``scheme = Proposed``.
            out[key] = value.strip()
    return out


def _strip_comment(line: str) -> str:
    quote = None
    for i, ch in enumerate(line):
        if ch in "'\"":
            quote = None if quote == ch else (ch if quote is None else quote)
        elif ch == "#" and quote is None:
            return line[:i]
    return line


def _coerce(cfg_fields: dict, values: dict) -> dict:
    out = {}
    for key, v in values.items():
        default = cfg_fields[key]
        if isinstance(default, bool):
            out[key] = bool(v)
        elif isinstance(default, float) and isinstance(v, int):
            out[key] = float(v)
        elif isinstance(default, tuple) and isinstance(v, list):
            out[key] = tuple(v)
        else:
            out[key] = v
    return out


def load_config(path=None, overrides: Iterable[str] = ()) -> ScenarioConfig:
    values: dict = {}
    if path is not None:
        values.update(parse_assignments(Path(path).read_text(encoding="utf-8").splitlines(), str(path)))
    values.update(parse_assignments(overrides, "--override"))
    defaults = ScenarioConfig().as_dict()
    return ScenarioConfig(**_coerce(defaults, values))
