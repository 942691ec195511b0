"""Real-time laboratory operations state: TAT, outstanding orders, volumes.

State is a pure function of the multiset of ingested events, so any
arrival order (results before orders, duplicates, interleavings) converges
to the same order table, TAT samples, and query answers. Events are keyed
by (order_id, msh_ts, result_status); replays are dropped.

TAT is measured from order placement to the *first final-class* result
(F, or C when no F preceded it) — preliminary results do not stop the
clock. Definitions vary between laboratories; this one is fixed here and
surfaced in the README.

An order is, at any instant, in exactly one of: outstanding (order seen,
no final), completed-with-TAT (order seen, final seen), or orphan-unhealed
(results only). Orphans heal into the completed/outstanding buckets the
moment their order event arrives; heals are also counted as anomalies for
operational visibility.

State persists as a replayable journal (jsonl) under the given directory;
sync() makes the tail durable and is called by the lab pipeline before it
commits queue offsets.
"""

from __future__ import annotations

import json
import math
import os
import threading
from dataclasses import dataclass
from pathlib import Path

from .emissary import LabDocument
from .hl7 import parse_message

STATUS_ORDERED = "ordered"
STATUS_PRELIMINARY = "preliminary"
STATUS_FINAL = "final"
STATUS_CORRECTED = "corrected"
STATUS_ORPHAN = "orphan-result"

_RANK = {"": 0, "P": 1, "F": 2, "C": 3}
_RANK_NAME = {0: STATUS_ORDERED, 1: STATUS_PRELIMINARY, 2: STATUS_FINAL, 3: STATUS_CORRECTED}

GROUP_BYS = ("none", "location", "lab_type_code", "pt_mrn")


@dataclass(frozen=True)
class OrderState:
    order_id: str
    pt_mrn: str
    lab_type_code: str
    location: str
    order_ts: int
    first_final_ts: int | None
    status: str


@dataclass(frozen=True)
class TatSample:
    order_id: str
    tat_ms: int
    lab_type_code: str
    location: str
    completed_ts: int


@dataclass(frozen=True)
class _Event:
    order_id: str
    msh_ts: int
    status: str  # "" for an order event, else P/F/C/other
    order_ts: int
    lab_type_code: str
    location: str
    pt_mrn: str

    @property
    def is_order(self) -> bool:
        return self.status == ""


def nearest_rank(sorted_values: list[int], p: float) -> int:
    """The ceil(p*n)-th (1-based) element of a sorted list."""
    idx = max(1, math.ceil(p * len(sorted_values)))
    return sorted_values[idx - 1]


def _location_of(doc: LabDocument) -> str:
    try:
        msg = parse_message(doc.hl7)
    except Exception:
        return "UNKNOWN"
    return msg.get("PV1-3.1") or msg.get("MSH-4") or "UNKNOWN"


class LabMetrics:
    """Single-writer lab state machine with snapshot-consistent queries."""

    def __init__(self, journal_dir: str | Path | None = None):
        self._lock = threading.RLock()
        self._events: dict[str, set[_Event]] = {}
        self._seen: set[tuple[str, int, str]] = set()
        self._states: dict[str, OrderState] = {}
        self._samples: dict[str, TatSample] = {}
        self.anomalies = {
            "duplicates": 0,
            "orphan_heals": 0,
            "unknown_status": 0,
            "negative_tat": 0,
        }
        self._journal_f = None
        if journal_dir is not None:
            journal_dir = Path(journal_dir)
            journal_dir.mkdir(parents=True, exist_ok=True)
            path = journal_dir / "journal.jsonl"
            if path.exists():
                self._replay(path)
            self._journal_f = open(path, "a", encoding="utf-8")

    # -- ingest ---------------------------------------------------------------

    def ingest(self, doc: LabDocument) -> bool:
        """Idempotent upsert; returns False for a replayed event."""
        event = _Event(
            order_id=doc.order_id,
            msh_ts=doc.msh_ts,
            status=doc.result_status or "",
            order_ts=doc.order_ts,
            lab_type_code=doc.lab_type_code,
            location=_location_of(doc),
            pt_mrn=doc.pt_mrn,
        )
        with self._lock:
            applied = self._apply(event)
            if applied and self._journal_f is not None:
                self._journal_f.write(json.dumps({
                    "order_id": event.order_id, "msh_ts": event.msh_ts,
                    "status": event.status, "order_ts": event.order_ts,
                    "lab_type_code": event.lab_type_code,
                    "location": event.location, "pt_mrn": event.pt_mrn,
                }, separators=(",", ":")) + "\n")
            return applied

    def _apply(self, event: _Event) -> bool:
        key = (event.order_id, event.msh_ts, event.status)
        if key in self._seen:
            self.anomalies["duplicates"] += 1
            return False
        self._seen.add(key)
        if event.status not in _RANK:
            self.anomalies["unknown_status"] += 1
        existing = self._events.setdefault(event.order_id, set())
        if event.is_order and existing and all(not e.is_order for e in existing):
            self.anomalies["orphan_heals"] += 1
        existing.add(event)
        self._derive(event.order_id)
        return True

    def _derive(self, order_id: str) -> None:
        events = self._events[order_id]
        ordered = sorted(events, key=lambda e: (e.msh_ts, e.status))
        has_order = any(e.is_order for e in events)
        order_ts = min(e.order_ts for e in events)
        pt_mrn = next((e.pt_mrn for e in ordered if e.pt_mrn), "")
        lab_type = next((e.lab_type_code for e in ordered if e.lab_type_code), "")
        location = next((e.location for e in ordered if e.location != "UNKNOWN"), "UNKNOWN")
        final_ts = [e.msh_ts for e in events if e.status in ("F", "C")]
        first_final = min(final_ts) if final_ts else None
        if has_order:
            rank = max(_RANK.get(e.status, 1) for e in events)
            status = _RANK_NAME[rank]
        else:
            status = STATUS_ORPHAN
        self._states[order_id] = OrderState(
            order_id=order_id, pt_mrn=pt_mrn, lab_type_code=lab_type,
            location=location, order_ts=order_ts,
            first_final_ts=first_final, status=status,
        )
        self._samples.pop(order_id, None)
        if has_order and first_final is not None:
            tat = first_final - order_ts
            if tat < 0:
                self.anomalies["negative_tat"] += 1
            else:
                self._samples[order_id] = TatSample(
                    order_id=order_id, tat_ms=tat, lab_type_code=lab_type,
                    location=location, completed_ts=first_final,
                )

    # -- persistence ----------------------------------------------------------

    def sync(self) -> None:
        with self._lock:
            if self._journal_f is not None:
                self._journal_f.flush()
                os.fsync(self._journal_f.fileno())

    def close(self) -> None:
        with self._lock:
            if self._journal_f is not None:
                self.sync()
                self._journal_f.close()
                self._journal_f = None

    def _replay(self, path: Path) -> None:
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                try:
                    d = json.loads(line)
                except json.JSONDecodeError:
                    continue  # torn tail line from a crash mid-write
                self._apply(_Event(
                    order_id=d["order_id"], msh_ts=d["msh_ts"], status=d["status"],
                    order_ts=d["order_ts"], lab_type_code=d["lab_type_code"],
                    location=d["location"], pt_mrn=d["pt_mrn"],
                ))

    def compact(self) -> None:
        """Rewrite the journal from live state (drops torn/duplicate lines)."""
        with self._lock:
            if self._journal_f is None:
                return
            path = Path(self._journal_f.name)
            self.close()
            tmp = path.with_suffix(".tmp")
            with open(tmp, "w", encoding="utf-8") as f:
                for events in self._events.values():
                    for e in sorted(events, key=lambda e: (e.msh_ts, e.status)):
                        f.write(json.dumps({
                            "order_id": e.order_id, "msh_ts": e.msh_ts,
                            "status": e.status, "order_ts": e.order_ts,
                            "lab_type_code": e.lab_type_code,
                            "location": e.location, "pt_mrn": e.pt_mrn,
                        }, separators=(",", ":")) + "\n")
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp, path)
            self._journal_f = open(path, "a", encoding="utf-8")

    # -- queries ---------------------------------------------------------------

    def _group_key(self, group_by: str):
        if group_by not in GROUP_BYS:
            raise ValueError(f"group_by must be one of {GROUP_BYS}")
        if group_by == "none":
            return lambda s: "all"
        return lambda s: getattr(s, group_by) or "UNKNOWN"

    def order_state(self, order_id: str) -> OrderState | None:
        with self._lock:
            return self._states.get(order_id)

    def order_count(self) -> int:
        with self._lock:
            return len(self._states)

    def tat_stats(self, t0: int, t1: int, group_by: str = "none") -> dict:
        """Per-group {count, mean, median, p90} of TAT for samples whose
        completion fell in [t0, t1); percentiles are nearest-rank."""
        if t0 >= t1:
            raise ValueError("t0 must be < t1")
        keyfn = self._group_key(group_by)
        groups: dict[str, list[int]] = {}
        with self._lock:
            for s in self._samples.values():
                if t0 <= s.completed_ts < t1:
                    key = keyfn(self._states[s.order_id])
                    groups.setdefault(key, []).append(s.tat_ms)
        out = {}
        for key, tats in sorted(groups.items()):
            tats.sort()
            out[key] = {
                "count": len(tats),
                "mean_ms": sum(tats) / len(tats),
                "median_ms": nearest_rank(tats, 0.5),
                "p90_ms": nearest_rank(tats, 0.9),
            }
        return out

    def outstanding(self, now: int, older_than_ms: int = 0,
                    group_by: str = "none") -> dict:
        """Orders still awaiting a final result, aged at least older_than_ms."""
        keyfn = self._group_key(group_by)
        with self._lock:
            rows = [
                s for s in self._states.values()
                if s.status in (STATUS_ORDERED, STATUS_PRELIMINARY)
                and s.order_ts <= now - older_than_ms
            ]
        rows.sort(key=lambda s: (s.order_ts, s.order_id))
        counts: dict[str, int] = {}
        orders = []
        for s in rows:
            counts[keyfn(s)] = counts.get(keyfn(s), 0) + 1
            orders.append({
                "order_id": s.order_id,
                "pt_mrn": s.pt_mrn,
                "lab_type_code": s.lab_type_code,
                "location": s.location,
                "order_ts": s.order_ts,
                "status": s.status,
                "age_ms": now - s.order_ts,
            })
        return {"total": len(orders), "groups": dict(sorted(counts.items())),
                "orders": orders}

    def volumes(self, t0: int, t1: int, bucket_ms: int,
                group_by: str = "none") -> dict:
        """Counts of placed orders per time bucket; buckets tile [t0, t1)."""
        if t0 >= t1:
            raise ValueError("t0 must be < t1")
        if bucket_ms <= 0:
            raise ValueError("bucket must be > 0")
        keyfn = self._group_key(group_by)
        n_buckets = math.ceil((t1 - t0) / bucket_ms)
        with self._lock:
            in_window = [
                s for s in self._states.values()
                if s.status != STATUS_ORPHAN and t0 <= s.order_ts < t1
            ]
        groups: dict[str, list[int]] = {}
        for s in in_window:
            counts = groups.setdefault(keyfn(s), [0] * n_buckets)
            counts[(s.order_ts - t0) // bucket_ms] += 1
        return {"t0": t0, "t1": t1, "bucket_ms": bucket_ms,
                "n_buckets": n_buckets, "groups": dict(sorted(groups.items()))}

    def categories(self) -> dict:
        """Conservation view: every order in exactly one bucket."""
        with self._lock:
            out = {"outstanding": 0, "completed": 0, "orphan": 0}
            for s in self._states.values():
                if s.status == STATUS_ORPHAN:
                    out["orphan"] += 1
                elif s.status in (STATUS_FINAL, STATUS_CORRECTED):
                    out["completed"] += 1
                else:
                    out["outstanding"] += 1
            return out
