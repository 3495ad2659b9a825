"""Append-only hash-chained ledgers for the reputation and resource chains.

Transactions have a canonical big-endian, length-prefixed binary encoding.
Blocks commit to their height, predecessor hash, transaction bytes and seal
time through SHA-256. Time is an integer count of simulated microseconds.

Each chain serves pending transactions one at a time with a fixed service
time, which is enough to compare one chain against two chains sharing the load.
"""

from __future__ import annotations

import enum
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, ClassVar, Iterable, Mapping

from .errors import (
    DuplicateTx,
    HandlerNotRegistered,
    LedgerCorrupted,
    NothingPending,
    UnknownWorker,
)
from .reputation import (
    Opinion,
    Recommendation,
    ReputationParams,
    ServiceHistory,
    composite_opinion,
    reputation_value,
    social_tie,
)

ZERO_HASH = bytes(32)
FILE_HEADER = "reliable-cdc-ledger"
FILE_VERSION = 1
DEFAULT_BLOCK_SIZE = 256

_U8 = struct.Struct(">B")
_U32 = struct.Struct(">I")
_I64 = struct.Struct(">q")
_U64 = struct.Struct(">Q")
_F64 = struct.Struct(">d")


class ChainId(str, enum.Enum):
    REPUTATION = "reputation"
    RESOURCE = "resource"


def seconds_to_us(t: float) -> int:
    return int(round(t * 1_000_000))


# -- canonical field codec -----------------------------------------------------


def _enc_value(kind: str, v) -> bytes:
    if kind == "int":
        return _I64.pack(int(v))
    if kind == "float":
        return _F64.pack(float(v))
    if kind == "bool":
        return _U8.pack(1 if v else 0)
    if kind == "str":
        return str(v).encode("utf-8")
    if kind == "ints":
        return _U32.pack(len(v)) + b"".join(_I64.pack(int(i)) for i in v)
    if kind == "opinion":
        return _F64.pack(v.belief) + _F64.pack(v.disbelief) + _F64.pack(v.uncertainty)
    raise TypeError(kind)


def _dec_value(kind: str, raw: bytes):
    if kind == "int":
        _expect_len(raw, 8)
        return _I64.unpack(raw)[0]
    if kind == "float":
        _expect_len(raw, 8)
        return _F64.unpack(raw)[0]
    if kind == "bool":
        _expect_len(raw, 1)
        if raw[0] > 1:
            raise ValueError("bool byte must be 0 or 1")
        return raw[0] == 1
    if kind == "str":
        return raw.decode("utf-8")
    if kind == "ints":
        (count,) = _U32.unpack_from(raw)
        _expect_len(raw, 4 + 8 * count)
        return tuple(_I64.unpack_from(raw, 4 + 8 * i)[0] for i in range(count))
    if kind == "opinion":
        _expect_len(raw, 24)
        return Opinion(*(_F64.unpack_from(raw, 8 * i)[0] for i in range(3)))
    raise TypeError(kind)


def _expect_len(raw: bytes, n: int) -> None:
    if len(raw) != n:
        raise ValueError(f"field of {len(raw)} bytes, expected {n}")


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValueError("truncated record")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]

    def chunk(self) -> bytes:
        return self.take(self.u32())

    def done(self) -> None:
        if self.pos != len(self.data):
            raise ValueError(f"{len(self.data) - self.pos} trailing bytes")


# -- transactions --------------------------------------------------------------

_TX_TYPES: dict[int, type] = {}


@dataclass(frozen=True)
class Transaction:
    """Base of all transaction kinds.

    Subclasses list ``(field, codec kind)`` pairs in ``SCHEMA``; the encoding
    is the kind code, the submission time and then each field as a
    length-prefixed chunk in that order.
    """

    KIND: ClassVar[int] = 0
    SCHEMA: ClassVar[tuple] = ()

    def __init_subclass__(cls, **kw):
        super().__init_subclass__(**kw)
        if cls.KIND in _TX_TYPES:
            raise TypeError(f"duplicate transaction kind {cls.KIND}")
        _TX_TYPES[cls.KIND] = cls

    def to_bytes(self) -> bytes:
        out = [_U8.pack(self.KIND), _U64.pack(self.submitted_at)]
        for name, kind in self.SCHEMA:
            raw = _enc_value(kind, getattr(self, name))
            out.append(_U32.pack(len(raw)) + raw)
        return b"".join(out)

    @staticmethod
    def from_bytes(data: bytes) -> "Transaction":
        r = _Reader(data)
        code = _U8.unpack(r.take(1))[0]
        cls = _TX_TYPES.get(code)
        if cls is None:
            raise ValueError(f"unknown transaction kind {code}")
        submitted_at = r.u64()
        values = {name: _dec_value(kind, r.chunk()) for name, kind in cls.SCHEMA}
        r.done()
        return cls(submitted_at=submitted_at, **values)

    @property
    def tx_id(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    @property
    def kind_name(self) -> str:
        return type(self).__name__


@dataclass(frozen=True)
class ReputationUpdate(Transaction):
    KIND: ClassVar[int] = 1
    SCHEMA: ClassVar[tuple] = (("msp", "int"), ("worker", "int"), ("opinion", "opinion"))
    msp: int = 0
    worker: int = 0
    opinion: Opinion = field(default_factory=Opinion.vacuous)
    submitted_at: int = 0


@dataclass(frozen=True)
class ResourceInteraction(Transaction):
    KIND: ClassVar[int] = 2
    SCHEMA: ClassVar[tuple] = (
        ("msp", "int"),
        ("worker", "int"),
        ("task_id", "int"),
        ("reward", "float"),
        ("outcome", "bool"),
    )
    msp: int = 0
    worker: int = 0
    task_id: int = 0
    reward: float = 0.0
    outcome: bool = True
    submitted_at: int = 0


@dataclass(frozen=True)
class Recruitment(Transaction):
    KIND: ClassVar[int] = 3
    SCHEMA: ClassVar[tuple] = (("msp", "int"), ("rep_threshold", "float"), ("task_descriptor", "str"))
    msp: int = 0
    rep_threshold: float = 0.0
    task_descriptor: str = ""
    submitted_at: int = 0


@dataclass(frozen=True)
class WorkerRegistration(Transaction):
    KIND: ClassVar[int] = 4
    SCHEMA: ClassVar[tuple] = (("worker", "int"), ("metadata", "str"))
    worker: int = 0
    metadata: str = ""
    submitted_at: int = 0


@dataclass(frozen=True)
class WorkerLogout(Transaction):
    KIND: ClassVar[int] = 5
    SCHEMA: ClassVar[tuple] = (("worker", "int"),)
    worker: int = 0
    submitted_at: int = 0


@dataclass(frozen=True)
class CrossChainResult(Transaction):
    KIND: ClassVar[int] = 6
    SCHEMA: ClassVar[tuple] = (("request_id", "str"), ("payload", "str"))
    request_id: str = ""
    payload: str = "{}"
    submitted_at: int = 0

    def data(self) -> dict:
        return json.loads(self.payload)


@dataclass(frozen=True)
class CrossChainRequest(Transaction):
    KIND: ClassVar[int] = 7
    SCHEMA: ClassVar[tuple] = (("msp", "int"), ("handler", "str"), ("workers", "ints"))
    msp: int = 0
    handler: str = "composite_reputation"
    workers: tuple = ()
    submitted_at: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "workers", tuple(int(w) for w in self.workers))


@dataclass(frozen=True)
class Receipt:
    tx_id: str
    enqueue_time: int


# -- blocks --------------------------------------------------------------------


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: bytes
    tx_list: tuple
    sealed_at: int
    hash: bytes

    @staticmethod
    def body_bytes(height: int, prev_hash: bytes, tx_list: Iterable[Transaction], sealed_at: int) -> bytes:
        txs = [t.to_bytes() for t in tx_list]
        return b"".join(
            [_U64.pack(height), prev_hash, _U32.pack(len(txs))]
            + [_U32.pack(len(t)) + t for t in txs]
            + [_U64.pack(sealed_at)]
        )

    @classmethod
    def seal(cls, height: int, prev_hash: bytes, tx_list, sealed_at: int) -> "Block":
        tx_list = tuple(tx_list)
        digest = hashlib.sha256(cls.body_bytes(height, prev_hash, tx_list, sealed_at)).digest()
        return cls(height, prev_hash, tx_list, sealed_at, digest)

    def recompute_hash(self) -> bytes:
        return hashlib.sha256(
            self.body_bytes(self.height, self.prev_hash, self.tx_list, self.sealed_at)
        ).digest()

    def to_record(self) -> bytes:
        """Stored form: body followed by the 32-byte hash."""
        return self.body_bytes(self.height, self.prev_hash, self.tx_list, self.sealed_at) + self.hash

    @classmethod
    def from_record(cls, record: bytes) -> "Block":
        """Decode and check a stored block; raises ValueError on any inconsistency."""
        if len(record) < 32:
            raise ValueError("record shorter than a hash")
        body, digest = record[:-32], record[-32:]
        if hashlib.sha256(body).digest() != digest:
            raise ValueError("block hash does not match its contents")
        r = _Reader(body)
        height = r.u64()
        prev = r.take(32)
        n = r.u32()
        txs = tuple(Transaction.from_bytes(r.chunk()) for _ in range(n))
        sealed_at = r.u64()
        r.done()
        return cls(height, prev, txs, sealed_at, digest)


def verify_records(records: Iterable[bytes]) -> bool:
    """True iff the stored blocks decode, hash correctly and link from genesis."""
    prev = None
    for i, rec in enumerate(records):
        try:
            blk = Block.from_record(rec)
        except (ValueError, UnicodeDecodeError, struct.error):
            return False
        if blk.height != i:
            return False
        if blk.prev_hash != (ZERO_HASH if prev is None else prev.hash):
            return False
        if prev is not None and blk.sealed_at < prev.sealed_at:
            return False
        prev = blk
    return prev is not None


# -- ledger --------------------------------------------------------------------


@dataclass
class ServiceRecord:
    tx_id: str
    submitted_at: int
    sealed_at: int

    @property
    def latency_us(self) -> int:
        return self.sealed_at - self.submitted_at


class ChainedLedger:
    """One append-only chain with a pending queue and a fixed per-transaction service time."""

    def __init__(
        self,
        chain_id: ChainId | str,
        block_size: int = DEFAULT_BLOCK_SIZE,
        service_time_us: int = 1000,
    ):
        if block_size < 1:
            raise ValueError("block_size must be >= 1")
        if service_time_us < 0:
            raise ValueError("service_time_us must be nonnegative")
        self.chain_id = ChainId(chain_id)
        self.block_size = block_size
        self.service_time_us = int(service_time_us)
        self.blocks: list[Block] = [Block.seal(0, ZERO_HASH, (), 0)]
        self.pending: list[Transaction] = []
        self._seen: set[str] = set()

    @property
    def head(self) -> Block:
        return self.blocks[-1]

    def append_tx(self, tx: Transaction, now: int | None = None) -> Receipt:
        """Queue a transaction; ``now`` defaults to its submission time."""
        tx_id = tx.tx_id
        if tx_id in self._seen:
            raise DuplicateTx(f"transaction {tx_id[:16]} already on {self.chain_id.value} chain")
        self._seen.add(tx_id)
        self.pending.append(tx)
        return Receipt(tx_id, tx.submitted_at if now is None else int(now))

    def seal_block(self, now: int) -> Block:
        if not self.pending:
            raise NothingPending(f"{self.chain_id.value} chain has no pending transactions")
        batch = self.pending[: self.block_size]
        del self.pending[: len(batch)]
        blk = Block.seal(self.head.height + 1, self.head.hash, batch, max(int(now), self.head.sealed_at))
        self.blocks.append(blk)
        return blk

    def seal_all(self, now: int) -> list[Block]:
        out = []
        while self.pending:
            out.append(self.seal_block(now))
        return out

    def drain(self, start: int = 0) -> list[ServiceRecord]:
        """Serve every pending transaction on the simulated clock.

        Transactions are served in queue order, each taking the service time
        once it has been submitted; a block is sealed when full or when the
        queue runs dry. Returns one record per transaction.
        """
        clock = max(int(start), self.head.sealed_at)
        out: list[ServiceRecord] = []
        while self.pending:
            batch = self.pending[: self.block_size]
            for tx in batch:
                clock = max(clock, tx.submitted_at) + self.service_time_us
            blk = self.seal_block(clock)
            out.extend(ServiceRecord(t.tx_id, t.submitted_at, blk.sealed_at) for t in blk.tx_list)
        return out

    def transactions(self, kind: type | None = None) -> list[Transaction]:
        """Sealed transactions in chain order, optionally of one kind."""
        return [t for b in self.blocks for t in b.tx_list if kind is None or isinstance(t, kind)]

    def to_records(self) -> list[bytes]:
        return [b.to_record() for b in self.blocks]

    def verify_chain(self) -> bool:
        for i, blk in enumerate(self.blocks):
            if blk.height != i or blk.recompute_hash() != blk.hash:
                return False
            expected_prev = ZERO_HASH if i == 0 else self.blocks[i - 1].hash
            if blk.prev_hash != expected_prev:
                return False
        return True

    # persistence
    def save(self, path) -> None:
        lines = [f"{FILE_HEADER} v{FILE_VERSION} {self.chain_id.value} {self.block_size} {self.service_time_us}"]
        lines += [rec.hex() for rec in self.to_records()]
        Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")

    @classmethod
    def load(cls, path) -> "ChainedLedger":
        lines = Path(path).read_text(encoding="ascii").splitlines()
        if not lines:
            raise LedgerCorrupted(f"{path}: empty file")
        head = lines[0].split()
        if len(head) != 5 or head[0] != FILE_HEADER or head[1] != f"v{FILE_VERSION}":
            raise LedgerCorrupted(f"{path}: unsupported header {lines[0]!r}")
        try:
            records = [bytes.fromhex(line) for line in lines[1:] if line]
            led = cls(head[2], int(head[3]), int(head[4]))
        except ValueError as exc:
            raise LedgerCorrupted(f"{path}: {exc}") from exc
        if not verify_records(records):
            raise LedgerCorrupted(f"{path}: chain verification failed")
        led.blocks = [Block.from_record(r) for r in records]
        led._seen = {t.tx_id for t in led.transactions()}
        return led


# -- cross-chain contract ------------------------------------------------------

Handler = Callable[[ChainedLedger, CrossChainRequest], dict]
_HANDLERS: dict[str, Handler] = {}


def register_handler(name: str, handler: Handler) -> None:
    _HANDLERS[name] = handler


def latest_opinions(ledger: ChainedLedger) -> dict[tuple[int, int], Opinion]:
    """Most recent opinion per (msp, worker) from the sealed history."""
    out: dict[tuple[int, int], Opinion] = {}
    for tx in ledger.transactions(ReputationUpdate):
        out[(tx.msp, tx.worker)] = tx.opinion
    return out


def known_workers(ledger: ChainedLedger) -> set[int]:
    known: set[int] = set()
    for tx in ledger.transactions():
        if isinstance(tx, (ReputationUpdate, WorkerRegistration)):
            known.add(tx.worker)
        elif isinstance(tx, WorkerLogout):
            known.discard(tx.worker)
    return known


def composite_from_history(
    opinions: Mapping[tuple[int, int], Opinion], msp: int, worker: int
) -> Opinion:
    """Composite opinion of ``msp`` on ``worker`` from a table of latest local opinions.

    Service histories are the sets of workers each principal has rated; other
    MSPs that rated the worker act as recommenders.
    """
    served: dict[int, set[int]] = {}
    for (m, w) in opinions:
        served.setdefault(m, set()).add(w)
    own = ServiceHistory(msp, frozenset(served.get(msp, ())))
    local = opinions.get((msp, worker), Opinion.vacuous())
    recs = [
        Recommendation(social_tie(own, ServiceHistory(r, frozenset(ws))), opinions[(r, worker)])
        for r, ws in sorted(served.items())
        if r != msp and (r, worker) in opinions
    ]
    return composite_opinion(local, recs)


def composite_reputation_handler(params: ReputationParams = ReputationParams()) -> Handler:
    def handle(target: ChainedLedger, req: CrossChainRequest) -> dict:
        known = known_workers(target)
        ops = latest_opinions(target)
        out = {}
        for w in req.workers:
            if w not in known:
                raise UnknownWorker(f"worker {w} has no record on the {target.chain_id.value} chain")
            op = composite_from_history(ops, req.msp, w)
            out[str(w)] = reputation_value(op, params.gamma)
        return {"reputation": out}

    return handle


register_handler("composite_reputation", composite_reputation_handler())


def cross_chain_query(
    source: ChainedLedger,
    target: ChainedLedger,
    request: CrossChainRequest,
    handlers: Mapping[str, Handler] | None = None,
) -> CrossChainResult:
    """Run a registered handler against the target chain's sealed history.

    The request is queued on the source chain and the result on both chains.
    """
    table = _HANDLERS if handlers is None else handlers
    handler = table.get(request.handler)
    if handler is None:
        raise HandlerNotRegistered(f"no cross-chain handler named {request.handler!r}")
    if not (source.verify_chain() and target.verify_chain()):
        raise LedgerCorrupted("cross-chain query on an unverified chain")
    payload = handler(target, request)
    receipt = source.append_tx(request)
    result = CrossChainResult(
        request_id=receipt.tx_id,
        payload=json.dumps(payload, sort_keys=True, separators=(",", ":")),
        submitted_at=request.submitted_at,
    )
    source.append_tx(result)
    target.append_tx(result)
    return result


# -- throughput model ----------------------------------------------------------


@dataclass(frozen=True)
class ThroughputResult:
    config: str
    n_txs: int
    throughput: float  # tx per simulated second
    avg_latency: float  # seconds
    makespan: float  # seconds


def _bench_txs(n_txs: int) -> list[Transaction]:
    return [
        ResourceInteraction(msp=0, worker=i, task_id=i, reward=1.0, outcome=True, submitted_at=0)
        for i in range(n_txs)
    ]


def measure_throughput(
    config: str,
    n_txs: int,
    service_time_per_tx: float = 1e-3,
    block_size: int = DEFAULT_BLOCK_SIZE,
) -> ThroughputResult:
    """Drain a burst of ``n_txs`` transactions through one or two chains.

    ``double`` deals transactions alternately to two independent chains that
    serve in parallel. Latency is submission to sealing of the holding block.
    """
    if n_txs < 1:
        raise ValueError("n_txs must be >= 1")
    if config not in ("single", "double"):
        raise ValueError(f"config must be 'single' or 'double', got {config!r}")
    st = seconds_to_us(service_time_per_tx)
    chains = [ChainedLedger(ChainId.RESOURCE, block_size, st)]
    if config == "double":
        chains.insert(0, ChainedLedger(ChainId.REPUTATION, block_size, st))
    for i, tx in enumerate(_bench_txs(n_txs)):
        chains[i % len(chains)].append_tx(tx)
    records = [r for c in chains for r in c.drain(0)]
    makespan = max(r.sealed_at for r in records) - min(r.submitted_at for r in records)
    avg_latency = sum(r.latency_us for r in records) / len(records)
    return ThroughputResult(
        config=config,
        n_txs=n_txs,
        throughput=n_txs / (makespan / 1e6),
        avg_latency=avg_latency / 1e6,
        makespan=makespan / 1e6,
    )
