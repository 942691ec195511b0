"""Validation and normalization of incoming HL7 into canonical documents.

Monitor ORU traffic becomes one MonitorDocument per OBX observation; lab
order/result traffic becomes one LabDocument per message. Date/time fields
are converted to epoch-ms UTC, everything else is carried in its original
form, and every document keeps the full original HL7 text for future
reprocessing. Anything that fails validation goes to the dead-letter
topic, never silently dropped: frames_in == messages_ok + messages_dead.

Wire form of both documents is UTF-8 JSON with exactly these field names:

  monitor: msh_ts, alarm_ts?, source, unit, channel, value_text,
           value_unit?, hl7
  lab:     msh_ts, pt_mrn, order_id, lab_type_code, order_ts,
           result_status?, hl7

(The upstream monitor schema names two distinct fields "text"; they are
value_text and value_unit here.)
"""

from __future__ import annotations

import json
import re
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any

from .hl7 import Hl7Message, ParseError, parse_message

TOPIC_MONITOR = "monitor.docs"
TOPIC_LAB = "lab.docs"
TOPIC_DEADLETTER = "deadletter"

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
_MS = timedelta(milliseconds=1)
_TS_RE = re.compile(
    r"^(\d{4})(\d{2})(\d{2})"
    r"(?:(\d{2})(\d{2})(?:(\d{2})(?:\.(\d{1,4}))?)?)?"
    r"([+-]\d{4})?$"
)

_ALARM_TOKEN = "ALARM"


class TimestampError(ValueError):
    pass


def to_epoch_utc(ts: str, default_offset_minutes: int = 0) -> int:
    """HL7 timestamp text -> milliseconds since the Unix epoch.

    Accepts YYYYMMDD[HHMM[SS[.ffff]]][+/-ZZZZ]; an embedded zone offset
    wins over default_offset_minutes.
    """
    m = _TS_RE.match(ts or "")
    if not m:
        raise TimestampError(f"malformed HL7 timestamp: {ts!r}")
    y, mo, da, hh, mi, ss, frac, zone = m.groups()
    if zone is not None:
        sign = 1 if zone[0] == "+" else -1
        offset = sign * (int(zone[1:3]) * 60 + int(zone[3:5]))
    else:
        offset = default_offset_minutes
    micros = int(frac.ljust(4, "0")) * 100 if frac else 0
    try:
        dt = datetime(
            int(y), int(mo), int(da),
            int(hh or 0), int(mi or 0), int(ss or 0), micros,
            tzinfo=timezone(timedelta(minutes=offset)),
        )
    except ValueError as exc:
        raise TimestampError(f"impossible calendar date in {ts!r}: {exc}") from exc
    return (dt - _EPOCH) // _MS


@dataclass(frozen=True)
class MonitorDocument:
    msh_ts: int
    source: str
    unit: str
    channel: str
    value_text: str
    hl7: str
    alarm_ts: int | None = None
    value_unit: str | None = None

    def to_wire(self) -> bytes:
        return _dump_wire(self, ("msh_ts", "alarm_ts", "source", "unit", "channel",
                                 "value_text", "value_unit", "hl7"))

    @classmethod
    def from_wire(cls, data: bytes) -> "MonitorDocument":
        d = json.loads(data)
        return cls(
            msh_ts=d["msh_ts"],
            alarm_ts=d.get("alarm_ts"),
            source=d["source"],
            unit=d["unit"],
            channel=d["channel"],
            value_text=d["value_text"],
            value_unit=d.get("value_unit"),
            hl7=d["hl7"],
        )


@dataclass(frozen=True)
class LabDocument:
    msh_ts: int
    pt_mrn: str
    order_id: str
    lab_type_code: str
    order_ts: int
    hl7: str
    result_status: str | None = None

    def to_wire(self) -> bytes:
        return _dump_wire(self, ("msh_ts", "pt_mrn", "order_id", "lab_type_code",
                                 "order_ts", "result_status", "hl7"))

    @classmethod
    def from_wire(cls, data: bytes) -> "LabDocument":
        d = json.loads(data)
        return cls(
            msh_ts=d["msh_ts"],
            pt_mrn=d["pt_mrn"],
            order_id=d["order_id"],
            lab_type_code=d["lab_type_code"],
            order_ts=d["order_ts"],
            result_status=d.get("result_status"),
            hl7=d["hl7"],
        )


def _dump_wire(doc: Any, names: tuple[str, ...]) -> bytes:
    out = {}
    for name in names:
        value = getattr(doc, name)
        if value is not None:
            out[name] = value
    return json.dumps(out, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


@dataclass(frozen=True)
class DeadLetter:
    reason: str
    detail: str
    raw: str

    def to_wire(self) -> bytes:
        return json.dumps(
            {"reason": self.reason, "detail": self.detail, "raw": self.raw},
            separators=(",", ":"), ensure_ascii=False,
        ).encode("utf-8")

    @classmethod
    def from_wire(cls, data: bytes) -> "DeadLetter":
        d = json.loads(data)
        return cls(reason=d["reason"], detail=d["detail"], raw=d["raw"])


@dataclass(frozen=True)
class SourceConfig:
    source_id: str
    default_utc_offset: int = 0  # minutes
    stream_kind: str = "monitor"  # "monitor" | "lab"

    def __post_init__(self):
        if not -720 <= self.default_utc_offset <= 840:
            raise ValueError("utc offset out of range [-720, +840] minutes")
        if self.stream_kind not in ("monitor", "lab"):
            raise ValueError(f"unknown stream kind {self.stream_kind!r}")


def is_alarm_channel(channel: str) -> bool:
    return _ALARM_TOKEN in channel.upper()


def _channel_name(msg: Hl7Message, n: int) -> str:
    return msg.get(f"OBX[{n}]-3.2") or msg.get(f"OBX[{n}]-3.1")


def _unit_and_source(msg: Hl7Message, cfg: SourceConfig) -> tuple[str, str]:
    unit = msg.get("PV1-3.1") or msg.get("MSH-4") or "UNKNOWN"
    source = msg.get("PV1-3.3") or msg.get("MSH-3") or cfg.source_id
    return unit, source


def normalize_monitor(
    msg: Hl7Message, cfg: SourceConfig
) -> tuple[list[MonitorDocument], list[DeadLetter]]:
    """One document per OBX observation, all carrying the full raw message."""
    try:
        msh_ts = to_epoch_utc(msg.get("MSH-7"), cfg.default_utc_offset)
    except TimestampError as exc:
        return [], [DeadLetter("missing-timestamp", str(exc), msg.raw)]
    unit, source = _unit_and_source(msg, cfg)
    obx_count = len(msg.segments_named("OBX"))
    if obx_count == 0:
        return [], [DeadLetter("no-observations", "message carries no OBX segment", msg.raw)]
    docs = []
    for n in range(1, obx_count + 1):
        channel = _channel_name(msg, n)
        alarm_ts = None
        if is_alarm_channel(channel):
            obs_ts = msg.get(f"OBX[{n}]-14")
            alarm_ts = to_epoch_utc(obs_ts, cfg.default_utc_offset) if obs_ts else msh_ts
        docs.append(
            MonitorDocument(
                msh_ts=msh_ts,
                alarm_ts=alarm_ts,
                source=source,
                unit=unit,
                channel=channel,
                value_text=msg.get(f"OBX[{n}]-5"),
                value_unit=msg.get(f"OBX[{n}]-6.1") or None,
                hl7=msg.raw,
            )
        )
    return docs, []


def normalize_lab(
    msg: Hl7Message, cfg: SourceConfig
) -> tuple[list[LabDocument], list[DeadLetter], int]:
    """Map an order/result message to a LabDocument.

    Returns (documents, dead_letters, warnings); a missing MRN is a warning
    (orders may precede registration), a missing order id is fatal.
    """
    try:
        msh_ts = to_epoch_utc(msg.get("MSH-7"), cfg.default_utc_offset)
    except TimestampError as exc:
        return [], [DeadLetter("missing-timestamp", str(exc), msg.raw)], 0
    order_id = msg.get("OBR-2.1") or msg.get("ORC-2.1")
    if not order_id:
        return [], [DeadLetter("missing-order-id", "no OBR-2 or ORC-2", msg.raw)], 0
    warnings = 0
    pt_mrn = msg.get("PID-3.1")
    if not pt_mrn:
        warnings = 1
    order_ts_text = msg.get("OBR-6") or msg.get("ORC-9")
    try:
        order_ts = to_epoch_utc(order_ts_text, cfg.default_utc_offset) if order_ts_text else msh_ts
    except TimestampError as exc:
        return [], [DeadLetter("bad-order-timestamp", str(exc), msg.raw)], warnings
    doc = LabDocument(
        msh_ts=msh_ts,
        pt_mrn=pt_mrn,
        order_id=order_id,
        lab_type_code=msg.get("OBR-4.1"),
        order_ts=order_ts,
        result_status=msg.get("OBR-25") or None,
        hl7=msg.raw,
    )
    return [doc], [], warnings


class PublishError(Exception):
    """Raised when the queue rejects a publish after the retry budget."""


class Publisher:
    """Queue publication with bounded exponential backoff and a disk spill.

    When the queue stays unavailable past the retry budget the document is
    journaled to local disk instead of being lost; drain_spill() republishes
    journaled documents once the queue recovers.
    """

    def __init__(self, queue, spill_dir: str | Path | None = None,
                 retries: int = 5, base_delay: float = 0.05):
        self.queue = queue
        self.retries = retries
        self.base_delay = base_delay
        self.spill_path = Path(spill_dir) / "spill.jsonl" if spill_dir else None
        self._spill_lock = threading.Lock()
        self.spilled = 0

    def publish(self, topic: str, key: bytes, value: bytes) -> int | None:
        """Returns the appended offset, or None when the record was spilled."""
        delay = self.base_delay
        for attempt in range(self.retries + 1):
            try:
                return self.queue.append(topic, key, value)
            except Exception:
                if attempt == self.retries:
                    break
                time.sleep(delay)
                delay = min(delay * 2, 1.0)
        self._spill(topic, key, value)
        return None

    def publish_many(self, topic: str, batch: list[tuple[bytes, bytes]]) -> int | None:
        """Single-fsync batch publish; spills record-by-record on failure."""
        delay = self.base_delay
        for attempt in range(self.retries + 1):
            try:
                return self.queue.append_many(topic, batch)
            except Exception:
                if attempt == self.retries:
                    break
                time.sleep(delay)
                delay = min(delay * 2, 1.0)
        for key, value in batch:
            self._spill(topic, key, value)
        return None

    def _spill(self, topic: str, key: bytes, value: bytes) -> None:
        if self.spill_path is None:
            raise PublishError(f"queue unavailable for topic {topic} and no spill dir")
        line = json.dumps(
            {"topic": topic, "key": key.decode("utf-8", "replace"),
             "value": value.decode("utf-8", "replace")}
        )
        with self._spill_lock:
            self.spill_path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.spill_path, "a", encoding="utf-8") as f:
                f.write(line + "\n")
            self.spilled += 1

    def drain_spill(self) -> int:
        """Republish journaled records; returns how many were drained."""
        if self.spill_path is None or not self.spill_path.exists():
            return 0
        with self._spill_lock:
            lines = self.spill_path.read_text(encoding="utf-8").splitlines()
            drained = 0
            for line in lines:
                rec = json.loads(line)
                self.queue.append(rec["topic"], rec["key"].encode(), rec["value"].encode())
                drained += 1
            self.spill_path.unlink()
            return drained


@dataclass
class EmissaryStats:
    frames_in: int = 0
    messages_ok: int = 0
    messages_dead: int = 0
    documents_out: int = 0
    warnings: int = 0


class Emissary:
    """Converts raw HL7 frames to canonical documents and publishes them.

    Stateless per message; one instance may serve many connections. Every
    frame ends as >=1 published documents or exactly one dead letter.
    """

    def __init__(self, queue, cfg: SourceConfig, spill_dir: str | Path | None = None):
        self.cfg = cfg
        self.publisher = Publisher(queue, spill_dir=spill_dir)
        self.stats = EmissaryStats()
        self._lock = threading.Lock()

    def process(self, raw_text: str) -> tuple[int, int]:
        """Handle one frame; returns (documents published, dead letters)."""
        try:
            msg = parse_message(raw_text)
        except ParseError as exc:
            self._dead(DeadLetter("parse-error", str(exc), raw_text))
            return 0, 1
        if self.cfg.stream_kind == "monitor":
            docs, dead = normalize_monitor(msg, self.cfg)
            warnings = 0
        else:
            docs, dead, warnings = normalize_lab(msg, self.cfg)
        topic = TOPIC_MONITOR if self.cfg.stream_kind == "monitor" else TOPIC_LAB
        key = msg.header.control_id.encode("utf-8")
        batch = [(key, d.to_wire()) for d in docs]
        if batch:
            self.publisher.publish_many(topic, batch)
        for dl in dead:
            self._dead(dl, count_frame=False)
        with self._lock:
            self.stats.frames_in += 1
            self.stats.warnings += warnings
            if dead:
                self.stats.messages_dead += 1
            else:
                self.stats.messages_ok += 1
                self.stats.documents_out += len(docs)
        return len(docs), len(dead)

    def _dead(self, dl: DeadLetter, count_frame: bool = True) -> None:
        self.publisher.publish(TOPIC_DEADLETTER, dl.reason.encode(), dl.to_wire())
        if count_frame:
            with self._lock:
                self.stats.frames_in += 1
                self.stats.messages_dead += 1
