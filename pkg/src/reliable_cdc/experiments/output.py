"""Writing scenario results: one CSV per table plus a JSON run record."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from ..ledger import ChainedLedger
from .config import ScenarioConfig
from .population import Chains
from .scenarios import ScenarioResult


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))  # shortest round-trip form, '.' decimal point
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return str(v)


def write_csv(path, rows: list[dict]) -> None:
    """Write rows with a header taken from the union of keys in first-seen order."""
    header: list[str] = []
    for row in rows:
        header.extend(k for k in row if k not in header)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(row.get(k)) for k in header])


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _ledgers(artifacts: dict) -> list[ChainedLedger]:
    found = []
    for v in artifacts.values():
        if isinstance(v, ChainedLedger):
            found.append(v)
        elif isinstance(v, Chains):
            found.extend((v.reputation, v.resource))
    return found


def write_result(
    out_dir,
    scenario: str,
    cfg: ScenarioConfig,
    result: ScenarioResult,
    version: str,
    wall_time: float,
) -> list[Path]:
    """Write tables, ledgers held in the artifacts, and ``manifest.json``.

    CSV files depend only on the config, so reruns with the same seed are
    byte-identical. Wall time lives in the manifest only.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, rows in result.tables.items():
        path = out / f"{name}.csv"
        write_csv(path, rows)
        written.append(path)

    for chain in _ledgers(result.artifacts):
        path = out / f"{chain.chain_id.value}.ledger"
        chain.save(path)
        written.append(path)

    manifest = {
        "scenario": scenario,
        "seed": cfg.seed,
        "version": version,
        "wall_time_s": wall_time,
        "files": [p.name for p in written],
        "notes": _jsonable(result.notes),
        "config": _jsonable(cfg.as_dict()),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(path)
    return written
