import numpy as np
import pytest
from hypothesis import given, strategies as st

from reliable_cdc.errors import DuplicateTx, HandlerNotRegistered, LedgerCorrupted, NothingPending, UnknownWorker
from reliable_cdc.ledger import (
    Block,
    ChainedLedger,
    ChainId,
    CrossChainRequest,
    CrossChainResult,
    Recruitment,
    ReputationUpdate,
    ResourceInteraction,
    Transaction,
    WorkerLogout,
    WorkerRegistration,
    composite_from_history,
    cross_chain_query,
    known_workers,
    latest_opinions,
    measure_throughput,
    seconds_to_us,
    verify_records,
)
from reliable_cdc.reputation import InteractionCounts, Opinion, ReputationParams, local_opinion, reputation_value

P = ReputationParams()


def interactions(n, start=0):
    return [ResourceInteraction(msp=1, worker=i, task_id=i, reward=2.5, outcome=i % 3 > 0, submitted_at=start + i)
            for i in range(n)]


def populated(n_tx=40, block_size=8) -> ChainedLedger:
    led = ChainedLedger(ChainId.RESOURCE, block_size)
    for tx in interactions(n_tx):
        led.append_tx(tx)
    led.seal_all(1000)
    return led


class TestTransactions:
    @pytest.mark.parametrize(
        "tx",
        [
            ReputationUpdate(msp=2, worker=7, opinion=Opinion(0.5, 0.25, 0.25), submitted_at=9),
            ResourceInteraction(msp=1, worker=3, task_id=4, reward=1.25, outcome=False, submitted_at=1),
            Recruitment(msp=0, rep_threshold=0.6, task_descriptor="matvec 40x25 ü", submitted_at=2),
            WorkerRegistration(worker=5, metadata="online", submitted_at=3),
            WorkerLogout(worker=5, submitted_at=4),
            CrossChainResult(request_id="ab" * 32, payload='{"a":1}', submitted_at=5),
            CrossChainRequest(msp=0, workers=(1, 2, 3), submitted_at=6),
        ],
    )
    def test_round_trip(self, tx):
        assert Transaction.from_bytes(tx.to_bytes()) == tx

    @given(
        st.integers(-(2**63), 2**63 - 1),
        st.integers(0, 2**63 - 1),
        st.floats(allow_nan=False),
        st.booleans(),
        st.integers(0, 2**64 - 1),
    )
    def test_round_trip_property(self, msp, worker, reward, outcome, t):
        tx = ResourceInteraction(msp=msp, worker=worker, task_id=0, reward=reward, outcome=outcome, submitted_at=t)
        assert Transaction.from_bytes(tx.to_bytes()) == tx

    def test_trailing_bytes_rejected(self):
        raw = WorkerLogout(worker=1).to_bytes()
        with pytest.raises(ValueError):
            Transaction.from_bytes(raw + b"\x00")
        with pytest.raises(ValueError):
            Transaction.from_bytes(raw[:-1])

    def test_distinct_ids(self):
        assert len({tx.tx_id for tx in interactions(100)}) == 100

    def test_seconds_to_us(self):
        assert seconds_to_us(1e-3) == 1000


class TestChain:
    def test_first_receipt(self):
        led = ChainedLedger("reputation")
        receipt = led.append_tx(WorkerLogout(worker=1, submitted_at=5), now=17)
        assert receipt.enqueue_time == 17
        assert led.append_tx(WorkerLogout(worker=2, submitted_at=5)).enqueue_time == 5

    def test_duplicate(self):
        led = ChainedLedger("reputation")
        led.append_tx(WorkerLogout(worker=1))
        with pytest.raises(DuplicateTx):
            led.append_tx(WorkerLogout(worker=1))

    def test_seal_one(self):
        led = ChainedLedger("reputation")
        led.append_tx(WorkerLogout(worker=1))
        blk = led.seal_block(10)
        assert blk.height == 1 and len(blk.tx_list) == 1
        with pytest.raises(NothingPending):
            led.seal_block(11)

    def test_batching(self):
        led = ChainedLedger("resource", block_size=256)
        for tx in interactions(300):
            led.append_tx(tx)
        assert [len(b.tx_list) for b in led.seal_all(1000)] == [256, 44]

    def test_genesis_verifies(self):
        assert ChainedLedger("resource").verify_chain()

    def test_sealed_blocks_immutable(self):
        led = populated()
        with pytest.raises(AttributeError):
            led.blocks[1].height = 5

    def test_tampered_block_detected(self):
        led = populated()
        blk = led.blocks[2]
        led.blocks[2] = Block(blk.height, blk.prev_hash, blk.tx_list[:-1], blk.sealed_at, blk.hash)
        assert not led.verify_chain()

    def test_bit_flips_detected(self):
        records = populated().to_records()
        rng = np.random.default_rng(0)
        sizes = [len(r) for r in records]
        for _ in range(1000):
            i = int(rng.integers(len(records)))
            pos = int(rng.integers(sizes[i] * 8))
            rec = bytearray(records[i])
            rec[pos // 8] ^= 1 << (pos % 8)
            assert not verify_records(records[:i] + [bytes(rec)] + records[i + 1 :])

    def test_reordered_blocks_detected(self):
        records = populated().to_records()
        records[1], records[2] = records[2], records[1]
        assert not verify_records(records)

    def test_save_load(self, tmp_path):
        led = populated()
        led.save(tmp_path / "c.ledger")
        back = ChainedLedger.load(tmp_path / "c.ledger")
        assert back.verify_chain()
        assert [b.hash for b in back.blocks] == [b.hash for b in led.blocks]
        with pytest.raises(DuplicateTx):
            back.append_tx(interactions(1)[0])

    def test_load_tampered(self, tmp_path):
        path = tmp_path / "c.ledger"
        populated().save(path)
        lines = path.read_text().splitlines()
        lines[3] = lines[3][:-1] + ("0" if lines[3][-1] != "0" else "1")
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(LedgerCorrupted):
            ChainedLedger.load(path)

    def test_load_bad_header(self, tmp_path):
        path = tmp_path / "c.ledger"
        path.write_text("something else\n")
        with pytest.raises(LedgerCorrupted):
            ChainedLedger.load(path)

    def test_replay_reproduces_hashes(self):
        a, b = populated(), populated()
        assert [x.hash for x in a.blocks] == [x.hash for x in b.blocks]

    def test_drain_service_model(self):
        led = ChainedLedger("resource", block_size=4, service_time_us=10)
        for tx in interactions(6):
            led.append_tx(tx)
        records = led.drain()
        assert [r.sealed_at for r in records] == [40, 40, 40, 40, 60, 60]
        assert records[0].latency_us == 40


def reputation_chain():
    led = ChainedLedger("reputation")
    ops = {
        (0, 1): local_opinion(InteractionCounts(4, 1), P),
        (0, 2): local_opinion(InteractionCounts(2, 0), P),
        (1, 1): local_opinion(InteractionCounts(9, 0), P),
        (1, 2): local_opinion(InteractionCounts(1, 3), P),
        (2, 3): local_opinion(InteractionCounts(5, 5), P),
    }
    for w in (1, 2, 3):
        led.append_tx(WorkerRegistration(worker=w))
    for (m, w), op in ops.items():
        led.append_tx(ReputationUpdate(msp=m, worker=w, opinion=op))
    led.seal_all(10)
    return led, ops


class TestCrossChain:
    def test_single_record(self):
        target = ChainedLedger("reputation")
        op = local_opinion(InteractionCounts(6, 2), P)
        target.append_tx(ReputationUpdate(msp=0, worker=4, opinion=op))
        target.seal_all(5)
        source = ChainedLedger("resource")
        res = cross_chain_query(source, target, CrossChainRequest(msp=0, workers=(4,), submitted_at=6))
        assert res.data()["reputation"]["4"] == pytest.approx(reputation_value(op))
        assert len(source.pending) == 2 and target.pending == [res]

    def test_unknown_worker(self):
        target, _ = reputation_chain()
        with pytest.raises(UnknownWorker):
            cross_chain_query(ChainedLedger("resource"), target, CrossChainRequest(msp=0, workers=(99,)))

    def test_logout_forgets(self):
        target, _ = reputation_chain()
        target.append_tx(WorkerLogout(worker=3, submitted_at=20))
        target.seal_all(20)
        assert known_workers(target) == {1, 2}

    def test_unregistered_handler(self):
        target, _ = reputation_chain()
        with pytest.raises(HandlerNotRegistered):
            cross_chain_query(ChainedLedger("resource"), target, CrossChainRequest(handler="nope"))

    def test_corrupted_target(self):
        target, _ = reputation_chain()
        blk = target.blocks[1]
        target.blocks[1] = Block(blk.height, blk.prev_hash, blk.tx_list, blk.sealed_at + 1, blk.hash)
        with pytest.raises(LedgerCorrupted):
            cross_chain_query(ChainedLedger("resource"), target, CrossChainRequest(workers=(1,)))

    def test_pure_function_of_history(self):
        a, _ = reputation_chain()
        b, _ = reputation_chain()
        req = CrossChainRequest(msp=0, workers=(1, 2, 3), submitted_at=30)
        ra = cross_chain_query(ChainedLedger("resource"), a, req)
        rb = cross_chain_query(ChainedLedger("resource"), b, req)
        assert ra == rb

    def test_latest_opinion_wins(self):
        led, ops = reputation_chain()
        newer = local_opinion(InteractionCounts(0, 7), P)
        led.append_tx(ReputationUpdate(msp=0, worker=1, opinion=newer, submitted_at=50))
        led.seal_all(50)
        table = latest_opinions(led)
        assert table[(0, 1)] == newer
        assert table[(1, 1)] == ops[(1, 1)]

    def test_composite_uses_recommenders(self):
        _, ops = reputation_chain()
        own = composite_from_history(ops, 0, 1)
        assert own != ops[(0, 1)]
        # MSP 0 never rated worker 3 and shares no workers with MSP 2: the tie is zero.
        assert composite_from_history(ops, 0, 3) == Opinion.vacuous()


class TestThroughput:
    def test_ratio(self):
        single = measure_throughput("single", 1000)
        double = measure_throughput("double", 1000)
        assert double.throughput / single.throughput == pytest.approx(2.0, abs=1e-12)
        assert double.avg_latency < single.avg_latency

    def test_single_rate(self):
        assert measure_throughput("single", 10_000, 1e-3).throughput == pytest.approx(1000.0)

    def test_bad_config(self):
        with pytest.raises(ValueError):
            measure_throughput("triple", 10)
