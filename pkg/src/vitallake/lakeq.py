"""Embedded durable append-only topic log (the message-queue tier).

One directory per topic holds segment files named by their base offset:

    <root>/<topic>/<base_offset:020>.seg
    <root>/cursors/<group>.json

Segment format: magic "LKQ1", then length-prefixed records, little-endian:

    u32 length   (bytes that follow: header + key + value)
    u32 crc      (crc32 of key+value)
    u64 offset
    u64 append_ts (epoch ms)
    u32 key_len
    key, value

Offsets per topic are dense and strictly increasing from 0. append()
returns only after the record is fsynced; concurrent appends share one
fsync via a leader-based group commit. On open the tail segment is
scanned and a torn final record is truncated away. Readers never receive
a record whose crc fails.

Consumption is at-least-once: consumer groups commit a resume offset
durably; records between a commit and a crash are redelivered.
"""

from __future__ import annotations

import json
import os
import struct
import threading
import time
import zlib
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path

MAGIC = b"LKQ1"
_LEN = struct.Struct("<I")
_HDR = struct.Struct("<IQQI")  # crc, offset, append_ts, key_len
_HDR_SIZE = _HDR.size  # 24

DEFAULT_MAX_RECORD = 4 << 20  # 4 MiB
DEFAULT_SEGMENT_BYTES = 64 << 20
INDEX_EVERY = 256

TOPIC_NAME_RESERVED = ("cursors",)


class LakeqError(Exception):
    pass


class RecordTooLargeError(LakeqError):
    pass


class BackpressureError(LakeqError):
    """Disk is out of space (or otherwise rejecting writes)."""


class TruncatedError(LakeqError):
    def __init__(self, topic: str, floor: int):
        super().__init__(f"offsets below {floor} on {topic} were removed by retention")
        self.floor = floor


class CorruptRecordError(LakeqError):
    def __init__(self, topic: str, path: str, at_byte: int):
        super().__init__(f"crc/structure violation in {path} at byte {at_byte}")
        self.topic = topic
        self.at_byte = at_byte


class CommitRegressionError(LakeqError):
    pass


@dataclass(frozen=True)
class LogRecord:
    offset: int
    append_ts: int
    key: bytes
    value: bytes
    crc: int


def _encode(offset: int, append_ts: int, key: bytes, value: bytes) -> bytes:
    crc = zlib.crc32(value, zlib.crc32(key))
    body = _HDR.pack(crc, offset, append_ts, len(key)) + key + value
    return _LEN.pack(len(body)) + body


@dataclass
class _Segment:
    base_offset: int
    path: Path
    size: int = 0
    record_count: int = 0
    last_ts: int = 0
    index: list[tuple[int, int]] = field(default_factory=list)  # (offset, byte pos)

    @property
    def next_offset(self) -> int:
        return self.base_offset + self.record_count


def _scan_segment(path: Path, base_offset: int, topic: str,
                  tail: bool) -> tuple[_Segment, int | None]:
    """Walk a segment building its sparse index.

    Returns (segment, torn_at): torn_at is the byte position where a
    truncated/garbled tail record starts, or None when the file is clean.
    Mid-file corruption in a sealed segment raises.
    """
    seg = _Segment(base_offset=base_offset, path=path)
    data = path.read_bytes()
    if data[:4] != MAGIC:
        raise CorruptRecordError(topic, str(path), 0)
    pos = 4
    expected = base_offset
    while pos < len(data):
        if pos + 4 > len(data):
            break  # torn length prefix
        (length,) = _LEN.unpack_from(data, pos)
        end = pos + 4 + length
        if length < _HDR_SIZE or end > len(data):
            break  # torn record
        crc, offset, append_ts, key_len = _HDR.unpack_from(data, pos + 4)
        if key_len > length - _HDR_SIZE:
            break
        key_start = pos + 4 + _HDR_SIZE
        payload = data[key_start:end]
        if zlib.crc32(payload) != crc or offset != expected:
            break
        if seg.record_count % INDEX_EVERY == 0:
            seg.index.append((offset, pos))
        seg.record_count += 1
        seg.last_ts = append_ts
        expected += 1
        pos = end
    seg.size = pos
    if pos == len(data):
        return seg, None
    if not tail:
        raise CorruptRecordError(topic, str(path), pos)
    return seg, pos


def _fsync_dir(path: Path) -> None:
    fd = os.open(path, os.O_RDONLY)
    try:
        os.fsync(fd)
    finally:
        os.close(fd)


class _TopicLog:
    def __init__(self, root: Path, topic: str, *, segment_bytes: int,
                 max_record: int, flush_window: float, clock):
        self.topic = topic
        self.dir = root / topic
        self.segment_bytes = segment_bytes
        self.max_record = max_record
        self.flush_window = flush_window
        self.clock = clock
        self.segments: list[_Segment] = []
        self._wlock = threading.RLock()
        self._fcv = threading.Condition()
        self._written = 0  # monotone logical byte counter across rolls
        self._flushed = 0
        self._flushing = False
        self._failed = False  # poisoned after a partial write; reopen to recover
        self._tail_f = None
        self._open()

    # -- lifecycle ---------------------------------------------------------

    def _open(self) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        paths = sorted(self.dir.glob("*.seg"))
        for i, path in enumerate(paths):
            base = int(path.stem)
            seg, torn_at = _scan_segment(path, base, self.topic, tail=(i == len(paths) - 1))
            if torn_at is not None:
                with open(path, "r+b") as f:
                    f.truncate(torn_at)
            self.segments.append(seg)
        if not self.segments:
            self._create_segment(0)
        else:
            tail = self.segments[-1]
            self._tail_f = open(tail.path, "ab")
        self._written = self._flushed = self.segments[-1].size

    def _create_segment(self, base_offset: int) -> None:
        seg = _Segment(base_offset=base_offset, path=self.dir / f"{base_offset:020d}.seg")
        with open(seg.path, "wb") as f:
            f.write(MAGIC)
            f.flush()
            os.fsync(f.fileno())
        _fsync_dir(self.dir)
        seg.size = 4
        self.segments.append(seg)
        self._tail_f = open(seg.path, "ab")

    def close(self) -> None:
        with self._wlock:
            if self._tail_f is not None:
                self._tail_f.flush()
                os.fsync(self._tail_f.fileno())
                self._tail_f.close()
                self._tail_f = None

    # -- write path ----------------------------------------------------------

    @property
    def high_water(self) -> int:
        return self.segments[-1].next_offset

    @property
    def floor(self) -> int:
        return self.segments[0].base_offset

    def append_many(self, batch: list[tuple[bytes, bytes]]) -> int:
        """Appends a batch under one lock and one durability wait.

        Returns the offset of the last record appended.
        """
        if not batch:
            raise ValueError("empty batch")
        for key, value in batch:
            if len(key) + len(value) > self.max_record:
                raise RecordTooLargeError(
                    f"record of {len(key) + len(value)} bytes exceeds {self.max_record}")
        with self._wlock:
            if self._failed:
                raise BackpressureError(f"topic {self.topic} writer poisoned; reopen to recover")
            now = int(self.clock() * 1000)
            tail = self.segments[-1]
            for key, value in batch:
                rec = _encode(tail.next_offset, now, key, value)
                if tail.size + len(rec) > self.segment_bytes and tail.record_count > 0:
                    self._roll()
                    tail = self.segments[-1]
                    rec = _encode(tail.next_offset, now, key, value)
                try:
                    self._tail_f.write(rec)
                except OSError as exc:
                    # a partial buffered write desyncs the tail; recovery
                    # truncation on reopen is the safe path back
                    self._failed = True
                    raise BackpressureError(f"append to {self.topic} failed: {exc}") from exc
                if tail.record_count % INDEX_EVERY == 0:
                    tail.index.append((tail.next_offset, tail.size))
                tail.record_count += 1
                tail.last_ts = now
                tail.size += len(rec)
                self._written += len(rec)
                last_offset = tail.next_offset - 1
            target = self._written
        self._wait_durable(target)
        return last_offset

    def append(self, key: bytes, value: bytes) -> int:
        return self.append_many([(key, value)])

    def _roll(self) -> None:
        # caller holds _wlock; seal the tail durably before switching
        self._tail_f.flush()
        os.fsync(self._tail_f.fileno())
        self._tail_f.close()
        with self._fcv:
            self._flushed = max(self._flushed, self._written)
        self._create_segment(self.high_water)

    def _wait_durable(self, upto: int) -> None:
        while True:
            with self._fcv:
                if self._flushed >= upto:
                    return
                if self._flushing:
                    self._fcv.wait(0.05)
                    continue
                self._flushing = True
            target = self._flushed
            try:
                if self.flush_window > 0:
                    time.sleep(self.flush_window)
                with self._wlock:
                    target = self._written
                    self._tail_f.flush()
                    os.fsync(self._tail_f.fileno())
            finally:
                with self._fcv:
                    self._flushed = max(self._flushed, target)
                    self._flushing = False
                    self._fcv.notify_all()

    # -- read path -----------------------------------------------------------

    def read(self, from_offset: int, max_records: int) -> list[LogRecord]:
        if from_offset < 0:
            raise ValueError("from_offset must be >= 0")
        if from_offset < self.floor:
            raise TruncatedError(self.topic, self.floor)
        with self._wlock:
            segments = list(self.segments)
            hw = self.high_water
        if from_offset >= hw:
            return []
        out: list[LogRecord] = []
        idx = bisect_right([s.base_offset for s in segments], from_offset) - 1
        want = from_offset
        while idx < len(segments) and len(out) < max_records:
            seg = segments[idx]
            out.extend(self._read_segment(seg, want, max_records - len(out)))
            want = seg.next_offset
            idx += 1
        return out

    def _read_segment(self, seg: _Segment, from_offset: int, limit: int) -> list[LogRecord]:
        if from_offset >= seg.next_offset or limit <= 0:
            return []
        hint = 4
        for off, pos in reversed(seg.index):
            if off <= from_offset:
                hint = pos
                break
        out: list[LogRecord] = []
        last = seg.next_offset - 1
        with open(seg.path, "rb") as f:
            f.seek(hint)
            while len(out) < limit:
                head = f.read(4)
                if len(head) < 4:
                    break
                (length,) = _LEN.unpack(head)
                body = f.read(length)
                if length < _HDR_SIZE or len(body) < length:
                    break  # unflushed tail
                crc, offset, append_ts, key_len = _HDR.unpack_from(body)
                payload = body[_HDR_SIZE:]
                if zlib.crc32(payload) != crc:
                    raise CorruptRecordError(self.topic, str(seg.path), f.tell() - length - 4)
                if offset > last:
                    break
                if offset >= from_offset:
                    out.append(LogRecord(offset, append_ts,
                                         payload[:key_len], payload[key_len:], crc))
        return out

    # -- retention -----------------------------------------------------------

    def sweep(self, *, retention_bytes: int | None, retention_ms: int | None,
              now_ms: int) -> int:
        with self._wlock:
            removed = 0
            while len(self.segments) > 1:
                victim = self.segments[0]
                old_enough = (retention_ms is not None
                              and victim.last_ts < now_ms - retention_ms)
                total = sum(s.size for s in self.segments)
                over_budget = retention_bytes is not None and total > retention_bytes
                if not (old_enough or over_budget):
                    break
                victim.path.unlink()
                self.segments.pop(0)
                removed += 1
            return removed


class LakeQueue:
    """Facade over per-topic logs plus the durable consumer-cursor store."""

    def __init__(self, root: str | Path, *, segment_bytes: int = DEFAULT_SEGMENT_BYTES,
                 max_record: int = DEFAULT_MAX_RECORD, flush_window: float = 0.0,
                 retention_bytes: int | None = None, clock=time.time):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.segment_bytes = segment_bytes
        self.max_record = max_record
        self.flush_window = flush_window
        self.retention_bytes = retention_bytes
        self.clock = clock
        self._topics: dict[str, _TopicLog] = {}
        self._topics_lock = threading.Lock()
        self._cursor_lock = threading.Lock()
        self._cursor_dir = self.root / "cursors"

    def _topic(self, name: str) -> _TopicLog:
        if name in TOPIC_NAME_RESERVED:
            raise ValueError(f"reserved topic name: {name}")
        with self._topics_lock:
            log = self._topics.get(name)
            if log is None:
                log = _TopicLog(self.root, name, segment_bytes=self.segment_bytes,
                                max_record=self.max_record,
                                flush_window=self.flush_window, clock=self.clock)
                self._topics[name] = log
            return log

    def append(self, topic: str, key: bytes, value: bytes) -> int:
        return self._topic(topic).append(key, value)

    def append_many(self, topic: str, batch: list[tuple[bytes, bytes]]) -> int:
        return self._topic(topic).append_many(batch)

    def read(self, topic: str, from_offset: int, max_records: int) -> list[LogRecord]:
        return self._topic(topic).read(from_offset, max_records)

    def high_water(self, topic: str) -> int:
        return self._topic(topic).high_water

    def truncation_floor(self, topic: str) -> int:
        return self._topic(topic).floor

    def topics(self) -> list[str]:
        on_disk = {p.name for p in self.root.iterdir()
                   if p.is_dir() and p.name not in TOPIC_NAME_RESERVED}
        return sorted(on_disk | set(self._topics))

    # -- consumer cursors ----------------------------------------------------

    def _cursor_path(self, group: str) -> Path:
        return self._cursor_dir / f"{group}.json"

    def committed(self, group: str, topic: str) -> int:
        path = self._cursor_path(group)
        if not path.exists():
            return 0
        return json.loads(path.read_text(encoding="utf-8")).get(topic, 0)

    def commit(self, group: str, topic: str, offset: int) -> None:
        if offset < 0 or offset > self.high_water(topic):
            raise ValueError(f"commit offset {offset} beyond high water")
        with self._cursor_lock:
            path = self._cursor_path(group)
            cursors = {}
            if path.exists():
                cursors = json.loads(path.read_text(encoding="utf-8"))
            if offset < cursors.get(topic, 0):
                raise CommitRegressionError(
                    f"{group}/{topic}: {offset} < {cursors[topic]}")
            cursors[topic] = offset
            self._cursor_dir.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            with open(tmp, "w", encoding="utf-8") as f:
                json.dump(cursors, f)
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp, path)
            _fsync_dir(self._cursor_dir)

    def depth(self, topic: str, group: str) -> int:
        return self.high_water(topic) - self.committed(group, topic)

    def sweep(self, *, retention_bytes: int | None = None,
              retention_ms: int | None = None) -> int:
        """Remove whole sealed segments past the retention policy."""
        if retention_bytes is None:
            retention_bytes = self.retention_bytes
        now_ms = int(self.clock() * 1000)
        removed = 0
        with self._topics_lock:
            logs = list(self._topics.values())
        for log in logs:
            removed += log.sweep(retention_bytes=retention_bytes,
                                 retention_ms=retention_ms, now_ms=now_ms)
        return removed

    def close(self) -> None:
        with self._topics_lock:
            for log in self._topics.values():
                log.close()
            self._topics.clear()
