"""Durable log tests: density, durability, recovery, cursors, retention.

Crash injection works on the file layer: a "kill -9" is simulated by
abandoning the writer instance (its fsynced bytes are on disk) and by
hand-truncating or byte-flipping segment files before reopening.
"""

import json

import pytest

from vitallake.lakeq import (
    CommitRegressionError,
    CorruptRecordError,
    LakeQueue,
    RecordTooLargeError,
    TruncatedError,
)


@pytest.fixture()
def q(tmp_path):
    queue = LakeQueue(tmp_path / "lakeq")
    yield queue
    queue.close()


class TestAppendRead:
    def test_first_append_offset_zero(self, q):
        assert q.append("t", b"k", b"v") == 0

    def test_offsets_dense(self, q):
        offsets = [q.append("t", b"", f"v{i}".encode()) for i in range(1000)]
        assert offsets == list(range(1000))

    def test_read_back(self, q):
        for i in range(3):
            q.append("t", f"k{i}".encode(), f"v{i}".encode())
        records = q.read("t", 0, 10)
        assert [(r.offset, r.key, r.value) for r in records] == [
            (0, b"k0", b"v0"), (1, b"k1", b"v1"), (2, b"k2", b"v2")]

    def test_read_at_high_water_is_empty(self, q):
        for i in range(3):
            q.append("t", b"", b"x")
        assert q.read("t", 3, 10) == []

    def test_read_repeatable(self, q):
        for i in range(50):
            q.append("t", b"", f"{i}".encode())
        a = q.read("t", 10, 20)
        b = q.read("t", 10, 20)
        assert a == b

    def test_read_negative_offset_rejected(self, q):
        with pytest.raises(ValueError):
            q.read("t", -1, 10)

    def test_record_too_large(self, q):
        with pytest.raises(RecordTooLargeError):
            q.append("t", b"", b"x" * (4 << 20 | 1))

    def test_append_many_single_offset_chain(self, q):
        last = q.append_many("t", [(b"", b"a"), (b"", b"b"), (b"", b"c")])
        assert last == 2
        assert q.high_water("t") == 3

    def test_topics_independent(self, q):
        q.append("a", b"", b"1")
        q.append("b", b"", b"2")
        assert q.high_water("a") == 1
        assert q.high_water("b") == 1


class TestSegmentsAndRecovery:
    def test_rolls_segments(self, tmp_path):
        q = LakeQueue(tmp_path, segment_bytes=256)
        for i in range(50):
            q.append("t", b"", b"x" * 40)
        seg_files = sorted((tmp_path / "t").glob("*.seg"))
        assert len(seg_files) > 1
        got = [r.value for r in q.read("t", 0, 100)]
        assert got == [b"x" * 40] * 50
        q.close()

    def test_reopen_after_abrupt_stop(self, tmp_path):
        q1 = LakeQueue(tmp_path)
        for i in range(10):
            q1.append("t", f"k{i}".encode(), f"v{i}".encode())
        # no close: simulate the process dying after appends returned
        q2 = LakeQueue(tmp_path)
        records = q2.read("t", 0, 100)
        assert [r.value for r in records] == [f"v{i}".encode() for i in range(10)]
        assert q2.high_water("t") == 10
        q2.close()

    def test_torn_tail_truncated_on_reopen(self, tmp_path):
        q1 = LakeQueue(tmp_path)
        for i in range(5):
            q1.append("t", b"", f"v{i}".encode())
        q1.close()
        seg = next((tmp_path / "t").glob("*.seg"))
        data = seg.read_bytes()
        seg.write_bytes(data[:-3])  # cut into the last record
        q2 = LakeQueue(tmp_path)
        assert q2.high_water("t") == 4
        assert [r.value for r in q2.read("t", 0, 10)] == [b"v0", b"v1", b"v2", b"v3"]
        # appends continue densely after the truncated record
        assert q2.append("t", b"", b"v4b") == 4
        q2.close()

    def test_bitflip_detected_never_returned(self, tmp_path):
        q1 = LakeQueue(tmp_path)
        for i in range(5):
            q1.append("t", b"", (b"%d" % i) * 10)
        q1.close()
        seg = next((tmp_path / "t").glob("*.seg"))
        data = bytearray(seg.read_bytes())
        data[-5] ^= 0xFF  # flip a byte inside the last record's value
        seg.write_bytes(bytes(data))
        q2 = LakeQueue(tmp_path)
        # recovery treats the bad tail record as torn and truncates it
        assert q2.high_water("t") == 4
        q2.close()

    def test_bitflip_mid_sealed_segment_raises_on_read(self, tmp_path):
        q1 = LakeQueue(tmp_path, segment_bytes=128)
        for i in range(30):
            q1.append("t", b"", b"x" * 40)
        q1.close()
        segs = sorted((tmp_path / "t").glob("*.seg"))
        victim = segs[0]
        data = bytearray(victim.read_bytes())
        data[30] ^= 0x01  # in the first record's value (4 len + 24 hdr = 28)
        victim.write_bytes(bytes(data))
        with pytest.raises(CorruptRecordError):
            LakeQueue(tmp_path).read("t", 0, 100)


class TestCursors:
    def test_commit_then_resume(self, tmp_path):
        q1 = LakeQueue(tmp_path)
        for i in range(8):
            q1.append("t", b"", f"v{i}".encode())
        q1.commit("g", "t", 5)
        q1.close()
        q2 = LakeQueue(tmp_path)
        assert q2.committed("g", "t") == 5
        assert q2.read("t", q2.committed("g", "t"), 10)[0].value == b"v5"
        q2.close()

    def test_commit_regression_rejected(self, q):
        for i in range(6):
            q.append("t", b"", b"x")
        q.commit("g", "t", 5)
        with pytest.raises(CommitRegressionError):
            q.commit("g", "t", 3)

    def test_commit_beyond_high_water_rejected(self, q):
        q.append("t", b"", b"x")
        with pytest.raises(ValueError):
            q.commit("g", "t", 2)

    def test_uncommitted_records_redelivered(self, tmp_path):
        q1 = LakeQueue(tmp_path)
        for i in range(10):
            q1.append("t", b"", f"v{i}".encode())
        q1.commit("g", "t", 4)
        # consumer processed 5..9 but crashed before committing
        q2 = LakeQueue(tmp_path)
        redelivered = q2.read("t", q2.committed("g", "t"), 100)
        assert [r.offset for r in redelivered] == [4, 5, 6, 7, 8, 9]
        q2.close()

    def test_groups_independent(self, q):
        for i in range(4):
            q.append("t", b"", b"x")
        q.commit("g1", "t", 4)
        q.commit("g2", "t", 1)
        assert q.committed("g1", "t") == 4
        assert q.committed("g2", "t") == 1
        assert q.depth("t", "g2") == 3

    def test_cursor_file_layout(self, tmp_path):
        q1 = LakeQueue(tmp_path)
        q1.append("monitor.docs", b"", b"x")
        q1.commit("archiver", "monitor.docs", 1)
        data = json.loads((tmp_path / "cursors" / "archiver.json").read_text())
        assert data == {"monitor.docs": 1}
        q1.close()


class TestBufferingAndSweep:
    def test_buffering_gap_delivered_in_order(self, q):
        """Consumer stopped, producer continues; restart sees the full gap."""
        for i in range(20):
            q.append("t", b"", f"v{i}".encode())
        q.commit("g", "t", 3)
        # consumer down; producer keeps appending
        for i in range(20, 40):
            q.append("t", b"", f"v{i}".encode())
        gap = q.read("t", q.committed("g", "t"), 1000)
        assert [r.value for r in gap] == [f"v{i}".encode() for i in range(3, 40)]

    def test_sweep_infinite_retention_removes_nothing(self, q):
        for i in range(10):
            q.append("t", b"", b"x" * 100)
        assert q.sweep() == 0

    def test_sweep_never_removes_active_segment(self, tmp_path):
        q = LakeQueue(tmp_path)
        q.append("t", b"", b"x")
        assert q.sweep(retention_bytes=1) == 0
        q.close()

    def test_sweep_by_age_removes_sealed_and_floor_advances(self, tmp_path):
        fake_now = [1000.0]
        q = LakeQueue(tmp_path, segment_bytes=200, clock=lambda: fake_now[0])
        for i in range(40):
            q.append("t", b"", b"x" * 50)
        assert len(sorted((tmp_path / "t").glob("*.seg"))) >= 4
        fake_now[0] += 3600
        removed = q.sweep(retention_ms=60_000)
        assert removed >= 3
        floor = q.truncation_floor("t")
        assert floor > 0
        with pytest.raises(TruncatedError) as exc_info:
            q.read("t", 0, 10)
        assert exc_info.value.floor == floor
        # data at/after the floor still reads fine
        assert q.read("t", floor, 10)[0].offset == floor
        q.close()

    def test_sweep_by_bytes(self, tmp_path):
        q = LakeQueue(tmp_path, segment_bytes=200)
        for i in range(40):
            q.append("t", b"", b"x" * 50)
        before = sum(f.stat().st_size for f in (tmp_path / "t").glob("*.seg"))
        q.sweep(retention_bytes=before // 3)
        after = sum(f.stat().st_size for f in (tmp_path / "t").glob("*.seg"))
        assert after < before
        q.close()


def test_concurrent_appends_dense_and_durable(tmp_path):
    import threading

    q = LakeQueue(tmp_path)
    offsets = []
    lock = threading.Lock()

    def worker(n):
        got = [q.append("t", b"", f"w{n}-{i}".encode()) for i in range(100)]
        with lock:
            offsets.extend(got)

    threads = [threading.Thread(target=worker, args=(n,)) for n in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sorted(offsets) == list(range(800))
    q.close()
    q2 = LakeQueue(tmp_path)
    assert q2.high_water("t") == 800
    q2.close()
