"""Stream workers: queue topics -> denormalized, deduplicated archive files.

Three consumers, each its own consumer group:

  monitor-archive  monitor.docs -> flat signal records, partitioned by
                   (UTC date, care unit) under archive/monitor/
  raw-archive      monitor.docs -> one raw-HL7 record per distinct message
                   control id under archive/raw/<date>/
  lab-route        lab.docs -> lab archive containers AND the live lab
                   metrics state, both before the offset commit

Offsets are committed only after container writes are durable, so a crash
between effect and commit redelivers records; idempotent sinks (dedupe
keys seeded from the existing archive on startup) turn the queue's
at-least-once into an exactly-once effect.
"""

from __future__ import annotations

import os
import re
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from . import emissary
from .archive import ContainerSchema, SchemaField, iter_blocks, scan, write_container
from .emissary import DeadLetter, LabDocument, MonitorDocument
from .hl7 import fast_control_id
from .lakeq import LakeQueue

_NUM_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")

SIGNAL_SCHEMA = ContainerSchema(
    name="signal-v1",
    fields=(
        SchemaField("ts", "int64"),
        SchemaField("source", "text"),
        SchemaField("unit", "text"),
        SchemaField("channel", "text"),
        SchemaField("value_text", "text"),
        SchemaField("value_num", "float64", optional=True),
        SchemaField("value_unit", "text", optional=True),
        SchemaField("is_alarm", "bool"),
        SchemaField("msg_control_id", "text"),
    ),
)

RAW_SCHEMA = ContainerSchema(
    name="raw-hl7-v1",
    fields=(
        SchemaField("ts", "int64"),
        SchemaField("msg_control_id", "text"),
        SchemaField("hl7", "text"),
    ),
)

LAB_SCHEMA = ContainerSchema(
    name="lab-v1",
    fields=(
        SchemaField("msh_ts", "int64"),
        SchemaField("pt_mrn", "text"),
        SchemaField("order_id", "text"),
        SchemaField("lab_type_code", "text"),
        SchemaField("order_ts", "int64"),
        SchemaField("result_status", "text", optional=True),
        SchemaField("hl7", "text"),
    ),
)


@dataclass(frozen=True)
class SignalRecord:
    ts: int
    source: str
    unit: str
    channel: str
    value_text: str
    value_num: float | None
    value_unit: str | None
    is_alarm: bool
    msg_control_id: str


def denormalize(doc: MonitorDocument) -> SignalRecord:
    """Flatten one observation document into a scan-friendly record."""
    value_num = None
    if _NUM_RE.match(doc.value_text):
        value_num = float(doc.value_text)
    return SignalRecord(
        ts=doc.msh_ts,
        source=doc.source,
        unit=doc.unit,
        channel=doc.channel,
        value_text=doc.value_text,
        value_num=value_num,
        value_unit=doc.value_unit,
        is_alarm=doc.alarm_ts is not None,
        msg_control_id=fast_control_id(doc.hl7),
    )


def signal_to_row(sig: SignalRecord) -> dict:
    return {
        "ts": sig.ts,
        "source": sig.source,
        "unit": sig.unit,
        "channel": sig.channel,
        "value_text": sig.value_text,
        "value_num": sig.value_num,
        "value_unit": sig.value_unit,
        "is_alarm": sig.is_alarm,
        "msg_control_id": sig.msg_control_id,
    }


def utc_date(ts_ms: int) -> str:
    return datetime.fromtimestamp(ts_ms / 1000, tz=timezone.utc).strftime("%Y-%m-%d")


@dataclass(frozen=True)
class PipelineConfig:
    worker_count: int = 1
    batch_records: int = 5000
    batch_max_latency_s: float = 10.0
    codec: str = "lz-block"

    def __post_init__(self):
        if self.worker_count < 1 or self.batch_records < 1:
            raise ValueError("worker_count and batch_records must be >= 1")


@dataclass
class PipelineStats:
    consumed: int = 0
    archived: int = 0
    duplicates: int = 0
    deadlettered: int = 0
    batches: int = 0


class PartitionedArchive:
    """Atomic container-file writes under <root>/<stream>/<date>[/<unit>]/."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._seq = 0
        self._lock = threading.Lock()

    def write_batch(self, rel_dir: str, rows: list[dict], schema: ContainerSchema,
                    codec: str = "lz-block") -> Path:
        target_dir = self.root / rel_dir
        target_dir.mkdir(parents=True, exist_ok=True)
        with self._lock:
            self._seq += 1
            seq = self._seq
        name = f"{int(time.time() * 1000):013d}-{seq:06d}.ctr"
        tmp = target_dir / (name + ".tmp")
        final = target_dir / name
        write_container(rows, schema, tmp, codec=codec, fsync=True)
        os.replace(tmp, final)
        dir_fd = os.open(target_dir, os.O_RDONLY)
        try:
            os.fsync(dir_fd)
        finally:
            os.close(dir_fd)
        return final

    def files(self, stream: str) -> list[Path]:
        base = self.root / stream
        if not base.exists():
            return []
        return sorted(p for p in base.rglob("*.ctr"))

    def scan(self, stream: str, **kwargs) -> list[dict]:
        return scan(self.files(stream), **kwargs)

    def count(self, stream: str) -> int:
        total = 0
        for path in self.files(stream):
            for _, records in iter_blocks(path):
                total += len(records)
        return total

    def bytes_used(self, stream: str) -> int:
        return sum(p.stat().st_size for p in self.files(stream))


class _Consumer:
    """Shared consume/commit loop: effects first, then the offset commit."""

    topic: str
    group: str

    def __init__(self, queue: LakeQueue, cfg: PipelineConfig):
        self.queue = queue
        self.cfg = cfg
        self.stats = PipelineStats()

    def run_once(self) -> int:
        start = self.queue.committed(self.group, self.topic)
        records = self.queue.read(self.topic, start, self.cfg.batch_records)
        if not records:
            return 0
        self._apply(records)
        self.queue.commit(self.group, self.topic, records[-1].offset + 1)
        self.stats.consumed += len(records)
        self.stats.batches += 1
        return len(records)

    def _apply(self, records) -> None:
        raise NotImplementedError

    def run(self, stop: threading.Event, idle_sleep: float = 0.02) -> None:
        while not stop.is_set():
            try:
                if self.run_once() == 0:
                    stop.wait(idle_sleep)
            except Exception:
                # no commit happened; records redeliver after the pause
                stop.wait(0.2)

    def drain(self) -> int:
        total = 0
        while True:
            n = self.run_once()
            if n == 0:
                return total
            total += n

    def _deadletter(self, reason: str, detail: str, raw: str) -> None:
        dl = DeadLetter(reason, detail, raw)
        self.queue.append(emissary.TOPIC_DEADLETTER, reason.encode(), dl.to_wire())
        self.stats.deadlettered += 1


class MonitorArchiver(_Consumer):
    """monitor.docs -> signal containers partitioned by (date, unit)."""

    topic = emissary.TOPIC_MONITOR
    group = "monitor-archive"

    def __init__(self, queue: LakeQueue, archive: PartitionedArchive,
                 cfg: PipelineConfig = PipelineConfig()):
        super().__init__(queue, cfg)
        self.archive = archive
        self.seen: set[tuple[str, str, int]] = set()
        for row in archive.scan("monitor", select=["msg_control_id", "channel", "ts"]):
            self.seen.add((row["msg_control_id"], row["channel"], row["ts"]))

    def _apply(self, records) -> None:
        batches: dict[tuple[str, str], list[dict]] = {}
        for rec in records:
            try:
                doc = MonitorDocument.from_wire(rec.value)
            except Exception as exc:
                self._deadletter("bad-document", str(exc), rec.value.decode("utf-8", "replace"))
                continue
            sig = denormalize(doc)
            key = (sig.msg_control_id, sig.channel, sig.ts)
            if key in self.seen:
                self.stats.duplicates += 1
                continue
            self.seen.add(key)
            batches.setdefault((utc_date(sig.ts), sig.unit), []).append(signal_to_row(sig))
        for (date, unit), rows in sorted(batches.items()):
            self.archive.write_batch(f"monitor/{date}/{unit}", rows,
                                     SIGNAL_SCHEMA, codec=self.cfg.codec)
            self.stats.archived += len(rows)


class RawCopyArchiver(_Consumer):
    """monitor.docs -> one raw-HL7 record per distinct message."""

    topic = emissary.TOPIC_MONITOR
    group = "raw-archive"

    def __init__(self, queue: LakeQueue, archive: PartitionedArchive,
                 cfg: PipelineConfig = PipelineConfig()):
        super().__init__(queue, cfg)
        self.archive = archive
        self.seen: set[str] = set()
        for row in archive.scan("raw", select=["msg_control_id"]):
            self.seen.add(row["msg_control_id"])

    def _apply(self, records) -> None:
        batches: dict[str, list[dict]] = {}
        for rec in records:
            try:
                doc = MonitorDocument.from_wire(rec.value)
            except Exception as exc:
                self._deadletter("bad-document", str(exc), rec.value.decode("utf-8", "replace"))
                continue
            control_id = fast_control_id(doc.hl7)
            if control_id in self.seen:
                self.stats.duplicates += 1
                continue
            self.seen.add(control_id)
            batches.setdefault(utc_date(doc.msh_ts), []).append(
                {"ts": doc.msh_ts, "msg_control_id": control_id, "hl7": doc.hl7})
        for date, rows in sorted(batches.items()):
            self.archive.write_batch(f"raw/{date}", rows, RAW_SCHEMA, codec=self.cfg.codec)
            self.stats.archived += len(rows)


class LabRouter(_Consumer):
    """lab.docs -> lab archive containers plus live lab metrics state."""

    topic = emissary.TOPIC_LAB
    group = "lab-route"

    def __init__(self, queue: LakeQueue, labmetrics, archive: PartitionedArchive,
                 cfg: PipelineConfig = PipelineConfig()):
        super().__init__(queue, cfg)
        self.labmetrics = labmetrics
        self.archive = archive
        self.seen: set[tuple[str, int, str]] = set()
        for row in archive.scan("lab", select=["order_id", "msh_ts", "result_status"]):
            self.seen.add((row["order_id"], row["msh_ts"], row["result_status"] or ""))

    def _apply(self, records) -> None:
        batches: dict[str, list[dict]] = {}
        for rec in records:
            try:
                doc = LabDocument.from_wire(rec.value)
            except Exception as exc:
                self._deadletter("bad-document", str(exc), rec.value.decode("utf-8", "replace"))
                continue
            self.labmetrics.ingest(doc)
            key = (doc.order_id, doc.msh_ts, doc.result_status or "")
            if key in self.seen:
                self.stats.duplicates += 1
                continue
            self.seen.add(key)
            batches.setdefault(utc_date(doc.msh_ts), []).append({
                "msh_ts": doc.msh_ts,
                "pt_mrn": doc.pt_mrn,
                "order_id": doc.order_id,
                "lab_type_code": doc.lab_type_code,
                "order_ts": doc.order_ts,
                "result_status": doc.result_status,
                "hl7": doc.hl7,
            })
        self.labmetrics.sync()
        for date, rows in sorted(batches.items()):
            self.archive.write_batch(f"lab/{date}", rows, LAB_SCHEMA, codec=self.cfg.codec)
            self.stats.archived += len(rows)
