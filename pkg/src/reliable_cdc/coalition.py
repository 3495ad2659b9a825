"""Miner coalition formation by merge-and-split.

Each miner evaluates a share of the online workers and keeps those whose
composite reputation clears the MSP threshold. Miners then group into disjoint
coalitions; a coalition's utility grows with the square of the reputation it
holds (selection probability times reputation mass) and shrinks with a
log-barrier communication cost and a per-worker computation cost. Coalitions
merge or split whenever the result is preferred under either the Pareto order
(per-miner utilities) or the coalition order (sum of coalition utilities).
"""

from __future__ import annotations

import enum
import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    InstanceTooLarge,
    InvalidConfig,
    MismatchedPlayers,
    ZeroReputationCoalition,
)

Coalition = frozenset


class Preference(str, enum.Enum):
    PARETO = "pareto"
    COALITION = "coalition"


@dataclass(frozen=True)
class MinerAssignment:
    """Workers kept by one miner, as ``(worker_id, composite_reputation)`` pairs."""

    miner_id: int
    workers: tuple = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "workers", tuple((w, float(r)) for w, r in self.workers))

    @property
    def reputation_sum(self) -> float:
        return math.fsum(r for _, r in self.workers)

    @property
    def n_workers(self) -> int:
        return len(self.workers)


@dataclass(frozen=True)
class CoalitionConfig:
    """Parameters of the coalition game.

    ``total_reputation_sum`` is the reputation mass of *all* online workers
    (discarded ones included) and normalises the selection probability.
    ``tol`` is the margin a change must clear to count as a strict improvement.
    """

    total_miners: int
    total_reputation_sum: float
    delta: float = 1.0
    rho: float = 0.01
    o: float = 0.1
    preference: Preference = Preference.PARETO
    tol: float = 1e-12
    max_split_enum: int = 8
    max_merge_enum: int = 12

    def __post_init__(self) -> None:
        object.__setattr__(self, "preference", Preference(self.preference))
        if self.total_miners < 1:
            raise InvalidConfig("total_miners must be >= 1")
        if not 0.0 < self.o < 1.0:
            raise InvalidConfig("o must lie in (0, 1)")
        if self.delta < 0 or self.rho < 0:
            raise InvalidConfig("delta and rho must be nonnegative")


@dataclass(frozen=True)
class Partition:
    coalitions: tuple

    def __post_init__(self) -> None:
        cs = tuple(sorted((frozenset(c) for c in self.coalitions), key=_coalition_key))
        seen: set = set()
        for c in cs:
            if not c:
                raise ValueError("coalitions must be nonempty")
            if seen & c:
                raise ValueError("coalitions must be disjoint")
            seen |= c
        object.__setattr__(self, "coalitions", cs)

    @property
    def members(self) -> frozenset:
        return frozenset().union(*self.coalitions)

    def __len__(self) -> int:
        return len(self.coalitions)

    def __iter__(self) -> Iterator[frozenset]:
        return iter(self.coalitions)

    def as_lists(self) -> list[list]:
        return [sorted(c) for c in self.coalitions]


@dataclass
class TraceStep:
    step: int
    operation: str
    before: list
    after: list
    utilities_before: dict
    utilities_after: dict
    total_before: float
    total_after: float

    def to_json(self) -> str:
        d = asdict(self)
        d["utilities_before"] = {str(k): v for k, v in self.utilities_before.items()}
        d["utilities_after"] = {str(k): v for k, v in self.utilities_after.items()}
        return json.dumps(d, sort_keys=True)


@dataclass
class FormationResult:
    partition: Partition
    best: frozenset
    trace: list = field(default_factory=list)


def _coalition_key(c: Iterable) -> tuple:
    s = sorted(c)
    return (s[0], len(s), s) if s else ((), 0, s)


def assign_workers(
    reputations: Mapping[object, float], n_miners: int, rep_threshold: float
) -> tuple[list[MinerAssignment], float, list]:
    """Deal workers round-robin to miners and drop those below threshold.

    Returns ``(assignments, total_reputation_sum, discarded_ids)``; the total
    covers every worker, discarded or not.
    """
    buckets: list[list] = [[] for _ in range(n_miners)]
    discarded = []
    for i, w in enumerate(sorted(reputations)):
        rep = float(reputations[w])
        if rep < rep_threshold:
            discarded.append(w)
        else:
            buckets[i % n_miners].append((w, rep))
    total = math.fsum(float(r) for r in reputations.values())
    return [MinerAssignment(m, tuple(b)) for m, b in enumerate(buckets)], total, discarded


class CoalitionGame:
    """Utility evaluation for one set of miner assignments, memoised per coalition."""

    def __init__(self, assignments: Sequence[MinerAssignment] | Mapping, cfg: CoalitionConfig):
        if isinstance(assignments, Mapping):
            assignments = list(assignments.values())
        self.assignments = {a.miner_id: a for a in assignments}
        self.cfg = cfg
        self._rep = {m: a.reputation_sum for m, a in self.assignments.items()}
        self._cache: dict[frozenset, float] = {}

    @property
    def miners(self) -> list:
        return sorted(self.assignments)

    def reputation_sum(self, c: Iterable) -> float:
        return math.fsum(self._rep[m] for m in c)

    def selection_probability(self, c: Iterable) -> float:
        if self.cfg.total_reputation_sum <= 0:
            raise InvalidConfig("total_reputation_sum must be positive")
        return self.reputation_sum(c) / self.cfg.total_reputation_sum

    def utility(self, c: Iterable) -> float:
        c = frozenset(c)
        u = self._cache.get(c)
        if u is None:
            s = self.reputation_sum(c)
            n_workers = sum(self.assignments[m].n_workers for m in c)
            u = (
                self.selection_probability(c) * s
                - self.cfg.delta * communication_cost(len(c), self.cfg)
                - self.cfg.rho * n_workers
            )
            self._cache[c] = u
        return u

    def miner_utility(self, m, c: Iterable, *, strict: bool = True) -> float:
        """Reputation-proportional share of the coalition utility.

        With ``strict=False`` a coalition holding no reputation splits its
        utility equally instead of raising.
        """
        c = frozenset(c)
        if m not in c:
            raise ValueError(f"miner {m} is not in coalition {sorted(c)}")
        total = self.reputation_sum(c)
        if total <= 0.0:
            if strict:
                raise ZeroReputationCoalition(f"coalition {sorted(c)} holds no reputation")
            return self.utility(c) / len(c)
        return self._rep[m] / total * self.utility(c)

    def miner_utilities(self, parts: Iterable[Iterable]) -> dict:
        out = {}
        for c in parts:
            c = frozenset(c)
            for m in c:
                out[m] = self.miner_utility(m, c, strict=False)
        return out

    def total_utility(self, parts: Iterable[Iterable]) -> float:
        return math.fsum(self.utility(c) for c in parts)

    def preferred(self, new: Sequence[Iterable], old: Sequence[Iterable]) -> bool:
        """Whether arrangement ``new`` is strictly preferred to ``old``."""
        new = [frozenset(c) for c in new]
        old = [frozenset(c) for c in old]
        if frozenset().union(*new) != frozenset().union(*old):
            raise MismatchedPlayers("partitions cover different miner sets")
        tol = self.cfg.tol
        if self.cfg.preference is Preference.COALITION:
            return self.total_utility(new) > self.total_utility(old) + tol
        un, uo = self.miner_utilities(new), self.miner_utilities(old)
        if any(un[m] < uo[m] for m in un):
            return False
        return any(un[m] > uo[m] + tol for m in un)


def selection_probability(c: Iterable, assignments, cfg: CoalitionConfig) -> float:
    return CoalitionGame(assignments, cfg).selection_probability(c)


def communication_cost(size: int, cfg: CoalitionConfig) -> float:
    """Log-barrier cost ``-ln(1 - ((size - o) / M)^2)``, zero for singletons."""
    if size < 1 or size > cfg.total_miners:
        raise ValueError(f"coalition size {size} outside [1, {cfg.total_miners}]")
    if size < 2:
        return 0.0
    return -math.log1p(-(((size - cfg.o) / cfg.total_miners) ** 2))


def coalition_utility(c: Iterable, assignments, cfg: CoalitionConfig) -> float:
    return CoalitionGame(assignments, cfg).utility(c)


def miner_utility(m, c: Iterable, assignments, cfg: CoalitionConfig) -> float:
    return CoalitionGame(assignments, cfg).miner_utility(m, c)


def pareto_preferred(p1, p2, assignments, cfg: CoalitionConfig) -> bool:
    game = CoalitionGame(assignments, _with_pref(cfg, Preference.PARETO))
    return game.preferred(list(p1), list(p2))


def coalition_order_preferred(p1, p2, assignments, cfg: CoalitionConfig) -> bool:
    game = CoalitionGame(assignments, _with_pref(cfg, Preference.COALITION))
    return game.preferred(list(p1), list(p2))


def _with_pref(cfg: CoalitionConfig, pref: Preference) -> CoalitionConfig:
    if cfg.preference is pref:
        return cfg
    d = asdict(cfg)
    d["preference"] = pref
    return CoalitionConfig(**d)


def set_partitions(items: Sequence) -> Iterator[list[list]]:
    """All set partitions of ``items`` (Bell-number many)."""
    items = list(items)
    if not items:
        yield []
        return
    if len(items) == 1:
        yield [[items[0]]]
        return
    first, rest = items[0], items[1:]
    for p in set_partitions(rest):
        for i in range(len(p)):
            yield p[:i] + [[first] + p[i]] + p[i + 1 :]
        yield [[first]] + p


def _binary_splits(c: frozenset) -> Iterator[tuple[frozenset, frozenset]]:
    """Two-block splits of ``c``; the block holding the smallest member comes first.

    Ordered by the bitmask of the other members that join the first block.
    """
    members = sorted(c)
    head, tail = members[0], members[1:]
    for mask in range((1 << len(tail)) - 1):
        left = frozenset([head] + [t for j, t in enumerate(tail) if mask >> j & 1])
        yield left, c - left


def bell_number(n: int) -> int:
    row = [1]
    for _ in range(n):
        nxt = [row[-1]]
        for v in row:
            nxt.append(nxt[-1] + v)
        row = nxt
    return row[0]


_SPLIT_CHUNK = 1 << 16


def _split_masks(game: "CoalitionGame", c: frozenset) -> Iterator[int]:
    """Bitmasks (in :func:`_binary_splits` order) of splits that may be preferred.

    A vectorised screen with a slack margin; callers confirm each candidate
    with the exact scalar preference, so the screen only has to avoid false
    negatives.
    """
    cfg = game.cfg
    members = sorted(c)
    head, tail = members[0], members[1:]
    rep = np.array([game._rep[m] for m in tail])
    wk = np.array([game.assignments[m].n_workers for m in tail], dtype=float)
    r_head, w_head = game._rep[head], game.assignments[head].n_workers
    s_c, n_c = game.reputation_sum(c), len(c)
    u_c = game.utility(c)
    total = cfg.total_reputation_sum
    slack = 1e-9 * max(1.0, abs(u_c))
    shifts = np.arange(len(tail))

    def util(s, n, w):
        x = (n - cfg.o) / cfg.total_miners
        cost = np.where(n >= 2, -np.log1p(-(x * x)), 0.0)
        return s * s / total - cfg.delta * cost - cfg.rho * w

    n_masks = (1 << len(tail)) - 1
    for start in range(0, n_masks, _SPLIT_CHUNK):
        masks = np.arange(start, min(start + _SPLIT_CHUNK, n_masks), dtype=np.int64)
        bits = ((masks[:, None] >> shifts) & 1).astype(float)
        s_l = r_head + bits @ rep
        n_l = 1 + bits.sum(axis=1)
        w_l = w_head + bits @ wk
        # Sum the right block directly; subtraction leaves residue when it holds no reputation.
        s_r, n_r, w_r = (1.0 - bits) @ rep, n_c - n_l, (1.0 - bits) @ wk
        u_l, u_r = util(s_l, n_l, w_l), util(s_r, n_r, w_r)
        if cfg.preference is Preference.COALITION:
            ok = u_l + u_r > u_c - slack
        else:
            # Shares are proportional to reputation, so each block compares its
            # utility per unit reputation with the original coalition's.
            # A block without reputation splits equally.
            if s_c > 0:
                q_c = u_c / s_c
                with np.errstate(divide="ignore", invalid="ignore"):
                    ok_l = np.where(s_l > 0, u_l / s_l >= q_c - slack, u_l >= -slack)
                    ok_r = np.where(s_r > 0, u_r / s_r >= q_c - slack, u_r >= -slack)
            else:
                ok_l = u_l / n_l >= u_c / n_c - slack
                ok_r = u_r / n_r >= u_c / n_c - slack
            ok = ok_l & ok_r
        yield from masks[ok].tolist()


def _mask_split(c: frozenset, mask: int) -> tuple[frozenset, frozenset]:
    members = sorted(c)
    head, tail = members[0], members[1:]
    left = frozenset([head] + [t for j, t in enumerate(tail) if mask >> j & 1])
    return left, c - left


class _Former:
    def __init__(self, game: CoalitionGame, rng: np.random.Generator | None):
        self.game = game
        self.rng = rng
        self.trace: list[TraceStep] = []

    def _order(self, seq: list) -> list:
        if self.rng is None:
            return seq
        idx = self.rng.permutation(len(seq))
        return [seq[i] for i in idx]

    def _record(self, op: str, before: list, after: list) -> None:
        g = self.game
        self.trace.append(
            TraceStep(
                step=len(self.trace),
                operation=op,
                before=[sorted(c) for c in before],
                after=[sorted(c) for c in after],
                utilities_before=g.miner_utilities(before),
                utilities_after=g.miner_utilities(after),
                total_before=g.total_utility(before),
                total_after=g.total_utility(after),
            )
        )

    def try_merge(self, parts: list[frozenset]) -> list[frozenset] | None:
        g = self.game
        idx = list(range(len(parts)))
        candidates: Iterable[tuple] = self._order(list(itertools.combinations(idx, 2)))
        for sel in candidates:
            if merged := self._merge_if_preferred(parts, sel):
                return merged
        if len(parts) <= g.cfg.max_merge_enum:
            for r in range(3, len(parts) + 1):
                for sel in self._order(list(itertools.combinations(idx, r))):
                    if merged := self._merge_if_preferred(parts, sel):
                        return merged
        else:
            # Too many coalitions to enumerate: grow chains greedily in scan order.
            order = self._order(idx)
            for start in range(len(order)):
                chain = [order[start]]
                for k in order[start + 1 :]:
                    chain.append(k)
                    if len(chain) >= 3 and (merged := self._merge_if_preferred(parts, tuple(chain))):
                        return merged
        return None

    def _merge_if_preferred(self, parts: list[frozenset], sel: tuple) -> list[frozenset] | None:
        group = [parts[i] for i in sel]
        union = frozenset().union(*group)
        if not self.game.preferred([union], group):
            return None
        rest = [c for i, c in enumerate(parts) if i not in set(sel)]
        self._record("merge", group, [union])
        return rest + [union]

    def try_split(self, parts: list[frozenset]) -> list[frozenset] | None:
        g = self.game
        big = [i for i, c in enumerate(parts) if len(c) >= 2]
        for i in self._order(big):
            c = parts[i]
            for mask in self._order(list(_split_masks(g, c))):
                left, right = _mask_split(c, mask)
                if g.preferred([left, right], [c]):
                    return self._apply_split(parts, i, [left, right])
        for i in self._order(big):
            c = parts[i]
            if len(c) < 3 or len(c) > g.cfg.max_split_enum:
                continue
            for sub in set_partitions(sorted(c)):
                if len(sub) < 3:
                    continue
                pieces = [frozenset(s) for s in sub]
                if g.preferred(pieces, [c]):
                    return self._apply_split(parts, i, pieces)
        return None

    def _apply_split(self, parts, i, pieces):
        self._record("split", [parts[i]], pieces)
        return parts[:i] + parts[i + 1 :] + pieces


def form_coalitions(
    assignments: Sequence[MinerAssignment] | Mapping,
    cfg: CoalitionConfig,
    seed: int | None = None,
    max_steps: int = 100_000,
) -> FormationResult:
    """Run merge-and-split from the all-singletons partition until no rule fires.

    Merges are searched first (pairs in canonical order, then larger unions),
    then binary splits, then general splits of small coalitions. Any accepted
    change restarts the scan. ``seed`` switches on a randomised scan order;
    ``None`` keeps the deterministic canonical order.
    """
    game = assignments if isinstance(assignments, CoalitionGame) else CoalitionGame(assignments, cfg)
    rng = None if seed is None else np.random.default_rng(seed)
    former = _Former(game, rng)
    parts = [frozenset({m}) for m in game.miners]
    for _ in range(max_steps):
        parts = sorted(parts, key=_coalition_key)
        nxt = former.try_merge(parts)
        if nxt is None:
            nxt = former.try_split(parts)
        if nxt is None:
            break
        parts = nxt
    else:
        raise RuntimeError("merge-and-split did not converge within max_steps")
    partition = Partition(tuple(parts))
    # max() keeps the first maximiser, i.e. the canonically smallest coalition.
    best = max(partition.coalitions, key=game.utility)
    return FormationResult(partition, best, former.trace)


def is_dhp_stable(partition: Partition | Sequence, assignments, cfg: CoalitionConfig) -> bool:
    """Exhaustive check that no coalition splits and no group merges profitably."""
    game = assignments if isinstance(assignments, CoalitionGame) else CoalitionGame(assignments, cfg)
    parts = list(partition.coalitions if isinstance(partition, Partition) else map(frozenset, partition))
    if len(parts) > cfg.max_merge_enum:
        raise InstanceTooLarge(f"{len(parts)} coalitions exceed merge bound {cfg.max_merge_enum}")
    for c in parts:
        if len(c) > cfg.max_split_enum:
            raise InstanceTooLarge(f"coalition of size {len(c)} exceeds split bound")
        if len(c) < 2:
            continue
        for sub in set_partitions(sorted(c)):
            if len(sub) >= 2 and game.preferred([frozenset(s) for s in sub], [c]):
                return False
    for r in range(2, len(parts) + 1):
        for group in itertools.combinations(parts, r):
            if game.preferred([frozenset().union(*group)], list(group)):
                return False
    return True


def write_trace_jsonl(trace: Iterable[TraceStep], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for step in trace:
            fh.write(step.to_json() + "\n")
