"""Scenario runner that wires reputation, coalitions, the incentive game,
coded execution and the ledgers into end-to-end experiments."""

from .config import SCHEMES, ScenarioConfig, load_config, render_config
from .scenarios import (
    SCENARIOS,
    ScenarioResult,
    run_full_protocol,
    run_ledger_bench,
    run_misbehavior_sweep,
    run_reputation_attack,
    run_selection_comparison,
    run_task_amount_sweep,
)

__all__ = [
    "SCENARIOS",
    "SCHEMES",
    "ScenarioConfig",
    "ScenarioResult",
    "load_config",
    "render_config",
    "run_full_protocol",
    "run_ledger_bench",
    "run_misbehavior_sweep",
    "run_reputation_attack",
    "run_selection_comparison",
    "run_task_amount_sweep",
]
