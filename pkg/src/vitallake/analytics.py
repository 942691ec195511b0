"""Batch analytics over archived signal containers.

Alarm-event extraction, channel series, and per-class storage reports.
Every extraction is defined to equal a naive full-scan reimplementation;
parallel scans run block ranges concurrently and merge in (file, block)
order so results never depend on worker count.

The annual storage estimate uses decimal GB (MB/day x 365 / 1000) — the
only divisor consistent with the published per-source rows — rounded
half-up to one decimal; the report footer states the rule.
"""

from __future__ import annotations

import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable

from .archive import FieldPredicate, MATCH_ALL, container_record_count, scan, split_points
from .topology import PartitionedArchive

DEFAULT_ALARM_GAP_MS = 30_000

ANNUAL_RULE_FOOTER = "est_annual_gb = storage_mb_per_day * 365 / 1000 (decimal GB), 1dp half-up"


@dataclass(frozen=True)
class AlarmEvent:
    source: str
    channel: str
    start_ts: int
    end_ts: int
    sample_count: int

    def to_row(self) -> dict:
        return {"source": self.source, "channel": self.channel,
                "start_ts": self.start_ts, "end_ts": self.end_ts,
                "sample_count": self.sample_count}


@dataclass(frozen=True)
class ChannelSeries:
    source: str
    channel: str
    points: tuple[tuple[int, float], ...]

    def to_row(self) -> dict:
        return {"source": self.source, "channel": self.channel,
                "points": [list(p) for p in self.points]}


@dataclass(frozen=True)
class StorageReportRow:
    source_class: str
    days: int
    signal_count_per_day: float
    signal_count_stdev: float
    storage_mb_per_day: float
    storage_mb_stdev: float
    est_annual_gb: float

    def to_row(self) -> dict:
        return {
            "source_class": self.source_class,
            "days": self.days,
            "signal_count_per_day": self.signal_count_per_day,
            "signal_count_stdev": self.signal_count_stdev,
            "storage_mb_per_day": self.storage_mb_per_day,
            "storage_mb_stdev": self.storage_mb_stdev,
            "est_annual_gb": self.est_annual_gb,
        }


def annual_estimate_gb(mb_per_day: float) -> float:
    gb = (Decimal(str(mb_per_day)) * 365 / 1000).quantize(
        Decimal("0.1"), rounding=ROUND_HALF_UP)
    return float(gb)


def extract_alarm_events(records: Iterable[dict],
                         gap_threshold_ms: int = DEFAULT_ALARM_GAP_MS) -> list[AlarmEvent]:
    """Merge consecutive alarm samples per (source, channel) into events.

    Samples whose inter-sample gap is <= the threshold belong to the same
    event; ordering of the input does not matter.
    """
    alarms = sorted(
        (r for r in records if r["is_alarm"]),
        key=lambda r: (r["source"], r["channel"], r["ts"]),
    )
    events: list[AlarmEvent] = []
    run: list[dict] = []

    def close_run():
        if run:
            events.append(AlarmEvent(
                source=run[0]["source"], channel=run[0]["channel"],
                start_ts=run[0]["ts"], end_ts=run[-1]["ts"],
                sample_count=len(run)))

    for rec in alarms:
        if run and (rec["source"] != run[-1]["source"]
                    or rec["channel"] != run[-1]["channel"]
                    or rec["ts"] - run[-1]["ts"] > gap_threshold_ms):
            close_run()
            run = []
        run.append(rec)
    close_run()
    return events


def extract_channel_series(records: Iterable[dict], source: str, channel: str,
                           t0: int, t1: int) -> ChannelSeries:
    """Numeric points for one (source, channel) in [t0, t1], ts ascending.

    Non-numeric samples are excluded; for duplicate timestamps the
    last-written record (input order) wins.
    """
    if t0 > t1:
        raise ValueError("t0 must be <= t1")
    by_ts: dict[int, float] = {}
    for r in records:
        if (r["source"] == source and r["channel"] == channel
                and r["value_num"] is not None and t0 <= r["ts"] <= t1):
            by_ts[r["ts"]] = r["value_num"]
    return ChannelSeries(
        source=source, channel=channel,
        points=tuple(sorted(by_ts.items())),
    )


def storage_report(archive: PartitionedArchive, stream: str = "monitor",
                   classes: list[str] | None = None,
                   ) -> tuple[list[StorageReportRow], list[str]]:
    """Per source-class (care unit) daily signal counts and storage sizes.

    Partition directories <stream>/<date>/<unit> define the samples: one
    (count, bytes) pair per class per day. Requested classes with no data
    are omitted and reported in the notices list.
    """
    per_class: dict[str, dict[str, list]] = {}
    for path in archive.files(stream):
        unit = path.parent.name
        date = path.parent.parent.name
        slot = per_class.setdefault(unit, {}).setdefault(date, [0, 0])
        slot[0] += container_record_count(path)
        slot[1] += path.stat().st_size
    rows = []
    notices = []
    wanted = classes if classes is not None else sorted(per_class)
    for cls in wanted:
        days = per_class.get(cls)
        if not days:
            notices.append(f"class {cls!r}: no archived data, omitted")
            continue
        counts = [c for c, _ in days.values()]
        mbs = [b / 1_000_000 for _, b in days.values()]
        mean_mb = statistics.fmean(mbs)
        rows.append(StorageReportRow(
            source_class=cls,
            days=len(days),
            signal_count_per_day=statistics.fmean(counts),
            signal_count_stdev=statistics.stdev(counts) if len(counts) > 1 else 0.0,
            storage_mb_per_day=mean_mb,
            storage_mb_stdev=statistics.stdev(mbs) if len(mbs) > 1 else 0.0,
            est_annual_gb=annual_estimate_gb(round(mean_mb, 6)),
        ))
    return rows, notices


def parallel_scan(paths, where: FieldPredicate = MATCH_ALL,
                  select: list[str] | None = None, workers: int = 4) -> list[dict]:
    """scan() over per-block ranges in a thread pool; merge order is
    (file, block index), so output equals the sequential scan."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    jobs = []
    for path in paths:
        for point in split_points(path):
            jobs.append((path, point))
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        chunks = pool.map(lambda job: scan(job[0], where=where, select=select,
                                           ranges=[job[1]]), jobs)
        out: list[dict] = []
        for chunk in chunks:
            out.extend(chunk)
    return out


class MonitorAnalytics:
    """Query facade over the monitor signal archive (gateway backend)."""

    def __init__(self, archive: PartitionedArchive, workers: int = 4):
        self.archive = archive
        self.workers = workers

    def _signals(self, t0: int, t1: int, extra_equals: dict | None = None) -> list[dict]:
        where = FieldPredicate.where(equals=extra_equals or {},
                                     intervals={"ts": (t0, t1)})
        return parallel_scan(self.archive.files("monitor"), where=where,
                             workers=self.workers)

    def alarms(self, t0: int, t1: int, source: str | None = None,
               channel: str | None = None,
               gap_threshold_ms: int = DEFAULT_ALARM_GAP_MS) -> list[dict]:
        equals: dict = {"is_alarm": True}
        if source:
            equals["source"] = source
        if channel:
            equals["channel"] = channel
        records = self._signals(t0, t1, equals)
        return [e.to_row() for e in extract_alarm_events(records, gap_threshold_ms)]

    def series(self, source: str, channel: str, t0: int, t1: int) -> dict:
        records = self._signals(t0, t1, {"source": source, "channel": channel})
        return extract_channel_series(records, source, channel, t0, t1).to_row()

    def storage(self, classes: list[str] | None = None) -> dict:
        rows, notices = storage_report(self.archive, classes=classes)
        return {"rows": [r.to_row() for r in rows], "notices": notices,
                "rule": ANNUAL_RULE_FOOTER}


def rows_to_csv(rows: list[dict]) -> str:
    """Deterministic CSV text for CLI output (columns in first-row order)."""
    import csv
    import io

    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()))
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()
