"""Deterministic synthetic HL7 traffic: monitors, ventilators, lab flow.

All randomness comes from an explicitly specified xoshiro256** generator
seeded via splitmix64 (pure 64-bit integer arithmetic, identical output on
any platform) — never the host's default RNG — so a seed pins the byte
stream exactly.

Per-bed channel plans are fixed tables tuned so the per-day signal counts
land on the published per-source daily volumes: the adult plan sums to
~3.35 signals/s/bed (~289k/day), pediatric ~2.48/s (~215k/day), and the
45-channel ventilator plan ~41.8/s (~3.6M/day). Identifiers live in an
obviously synthetic namespace (MRN "SIM...", order ids "SIMO...").

The lab generator also emits a ground-truth manifest (order ids, order and
result times, exact TAT in ms) that downstream metrics are checked
against end to end.
"""

from __future__ import annotations

import hashlib
import json
import math
import socket
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .hl7 import MllpDecoder, encode_mllp

MASK64 = (1 << 64) - 1

CORPUS_SEED = 42
SIM_EPOCH_S = 1488326400  # 2017-03-01T00:00:00Z

# (channel name, channel code, uom, interval s, value range)
ADULT_MONITOR_PLAN = (
    ("HR", "0002-4bb8", "bpm", 1, (55.0, 105.0)),
    ("SpO2", "0002-4bb9", "%", 2, (90.0, 100.0)),
    ("RR", "0002-4bba", "rpm", 3, (8.0, 28.0)),
    ("ABP-S", "0002-4a10", "mmHg", 3, (90.0, 150.0)),
    ("ABP-D", "0002-4a11", "mmHg", 3, (50.0, 90.0)),
    ("ETCO2", "0002-4a20", "mmHg", 4, (30.0, 45.0)),
    ("TEMP", "0002-4a31", "C", 5, (36.0, 38.5)),
    ("CVP", "0002-4a42", "mmHg", 5, (2.0, 12.0)),
    ("ST-II", "0002-4a55", "mm", 5, (-1.0, 1.0)),
)

PEDIATRIC_MONITOR_PLAN = (
    ("HR", "0002-4bb8", "bpm", 1, (80.0, 160.0)),
    ("SpO2", "0002-4bb9", "%", 2, (92.0, 100.0)),
    ("RR", "0002-4bba", "rpm", 3, (16.0, 44.0)),
    ("ETCO2", "0002-4a20", "mmHg", 4, (30.0, 45.0)),
    ("TEMP", "0002-4a31", "C", 5, (36.0, 38.5)),
    ("CVP", "0002-4a42", "mmHg", 5, (2.0, 10.0)),
)

# 45 channels: 41 at 1 s plus 4 slower settings channels
VENTILATOR_PLAN = tuple(
    (f"VENT-{i:02d}", f"0003-{0x4000 + i:04x}", "cmH2O", 1, (5.0, 35.0))
    for i in range(41)
) + tuple(
    (f"VENT-SET-{i}", f"0003-{0x5000 + i:04x}", "", 5, (0.0, 1.0))
    for i in range(4)
)

MAX_MONITOR_CHANNELS = 892
MAX_VENTILATOR_CHANNELS = 45


def splitmix64(seed: int):
    x = seed & MASK64

    def next_u64() -> int:
        nonlocal x
        x = (x + 0x9E3779B97F4A7C15) & MASK64
        z = x
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    return next_u64


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256SS:
    """xoshiro256** with splitmix64 state initialization."""

    def __init__(self, seed: int):
        sm = splitmix64(seed)
        self.s = [sm(), sm(), sm(), sm()]

    def next_u64(self) -> int:
        s = self.s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def random(self) -> float:
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def randrange(self, n: int) -> int:
        return self.next_u64() % n

    def uniform(self, a: float, b: float) -> float:
        return a + (b - a) * self.random()

    def choice(self, seq):
        return seq[self.randrange(len(seq))]

    def expovariate(self, rate: float) -> float:
        return -math.log(1.0 - self.random()) / rate

    def gauss(self) -> float:
        # Box-Muller, no caching: two draws per sample keeps state simple
        u1 = 1.0 - self.random()
        u2 = self.random()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def lognormal(self, mu: float, sigma: float) -> float:
        return math.exp(mu + sigma * self.gauss())

    def weighted_choice(self, pairs):
        total = sum(w for _, w in pairs)
        x = self.random() * total
        acc = 0.0
        for item, w in pairs:
            acc += w
            if x < acc:
                return item
        return pairs[-1][0]


def format_hl7_ts(epoch_ms: int) -> str:
    secs, ms = divmod(epoch_ms, 1000)
    base = datetime.fromtimestamp(secs, tz=timezone.utc).strftime("%Y%m%d%H%M%S")
    return f"{base}.{ms:03d}0+0000" if ms else f"{base}+0000"


@dataclass(frozen=True)
class FleetProfile:
    units: tuple[str, ...] = ("MICU",)
    beds_per_unit: int = 1
    channel_plan: tuple = ADULT_MONITOR_PLAN
    kind: str = "monitor"  # "monitor" | "ventilator"
    alarm_rate_per_hour: float = 0.0
    seed: int = 1
    start_ts_s: int = SIM_EPOCH_S

    def __post_init__(self):
        limit = MAX_VENTILATOR_CHANNELS if self.kind == "ventilator" else MAX_MONITOR_CHANNELS
        if len(self.channel_plan) > limit:
            raise ValueError(f"{self.kind} plan exceeds {limit} channels")
        for _, _, _, interval, _ in self.channel_plan:
            if not 1 <= interval <= 5:
                raise ValueError("channel intervals must be within 1..5 s")

    @property
    def signals_per_second_per_bed(self) -> float:
        return sum(1.0 / interval for _, _, _, interval, _ in self.channel_plan)


ADULT_PROFILE = FleetProfile(channel_plan=ADULT_MONITOR_PLAN)


def gen_monitor_messages(profile: FleetProfile, duration_s: int):
    """Yield (sim_epoch_ms, hl7_text); deterministic for a given profile."""
    rng = Xoshiro256SS(profile.seed)
    beds = []
    for unit in profile.units:
        for b in range(profile.beds_per_unit):
            bed = f"B{b + 1:02d}"
            phases = [rng.randrange(interval) for _, _, _, interval, _ in profile.channel_plan]
            next_alarm = (
                rng.expovariate(profile.alarm_rate_per_hour / 3600.0)
                if profile.alarm_rate_per_hour > 0 else None
            )
            beds.append({"unit": unit, "bed": bed, "phases": phases,
                         "next_alarm": next_alarm, "mrn": f"SIM{rng.randrange(900000) + 100000}"})
    seq = 0
    for t in range(duration_s):
        for bed in beds:
            due = [
                entry for i, entry in enumerate(profile.channel_plan)
                if (t - bed["phases"][i]) % entry[3] == 0
            ]
            alarms = 0
            while bed["next_alarm"] is not None and bed["next_alarm"] <= t:
                alarms += 1
                bed["next_alarm"] += rng.expovariate(profile.alarm_rate_per_hour / 3600.0)
            if not due and not alarms:
                continue
            seq += 1
            ts_ms = (profile.start_ts_s + t) * 1000
            ts = format_hl7_ts(ts_ms)
            ctrl = f"SIM-{bed['unit']}-{bed['bed']}-{seq:08d}"
            segs = [
                f"MSH|^~\\&|MON|HOSP|LAKE|HOSP|{ts}||ORU^R01|{ctrl}|P|2.3",
                f"PID|1||{bed['mrn']}^^^SIM^MR||SIM^PATIENT",
                f"PV1|1|I|{bed['unit']}^1^{bed['bed']}",
            ]
            n = 0
            for n, (name, code, uom, _, lohi) in enumerate(due, 1):
                value = round(rng.uniform(*lohi), 1)
                segs.append(f"OBX|{n}|NM|{code}^{name}||{value}|{uom}|||||F")
            for a in range(alarms):
                n += 1
                segs.append(
                    f"OBX|{n}|ST|0002-f001^ALARM-HR||HR HIGH {int(rng.uniform(120, 180))}"
                    f"||||||F|||{ts}"
                )
            yield ts_ms, "\r".join(segs)


def gen_monitor_stream(profile: FleetProfile, duration_s: int) -> bytes:
    """The same traffic as MLLP frame bytes (file form of the live stream)."""
    return b"".join(encode_mllp(text) for _, text in gen_monitor_messages(profile, duration_s))


# ---------------------------------------------------------------------------
# Lab flow
# ---------------------------------------------------------------------------

DEFAULT_LAB_TYPES = (("CBC", 0.35), ("BMP", 0.3), ("TROP", 0.15), ("UA", 0.2))

# ~40M results/year across the system is ~110k/day
FULL_SCALE_ORDERS_PER_DAY = 109_589


@dataclass(frozen=True)
class LabFlowProfile:
    orders_per_hour: float = 120.0
    locations: tuple[str, ...] = ("ED", "MICU", "WARD-3")
    lab_type_mix: tuple = DEFAULT_LAB_TYPES
    tat_mu: float = 14.8  # log of TAT in ms; exp(14.8) ~ 45 min
    tat_sigma: float = 0.5
    prelim_fraction: float = 0.2
    patient_pool: int = 50
    seed: int = 1
    start_ts_s: int = SIM_EPOCH_S


def _lab_msh(kind: str, ts_ms: int, ctrl: str, location: str) -> str:
    msg_type = "ORM^O01" if kind == "order" else "ORU^R01"
    return f"MSH|^~\\&|LIS|{location}|LAKE|HOSP|{format_hl7_ts(ts_ms)}||{msg_type}|{ctrl}|P|2.3"


def _obr(order_id: str, lab_type: str, order_ts_ms: int, status: str = "") -> str:
    fields = [""] * 25
    fields[0] = "1"
    fields[1] = order_id
    fields[3] = f"{lab_type}^{lab_type} panel"
    fields[5] = format_hl7_ts(order_ts_ms)
    fields[24] = status
    return "OBR|" + "|".join(fields)


def gen_lab_messages(profile: LabFlowProfile, duration_s: int):
    """Returns (events, manifest): events are (sim_epoch_ms, hl7_text) sorted
    by time; every order is eventually followed by a final result and the
    manifest records the exact ground truth."""
    rng = Xoshiro256SS(profile.seed)
    mrns = [f"SIM{100000 + i}" for i in range(profile.patient_pool)]
    events: list[tuple[int, int, str]] = []
    manifest: list[dict] = []
    if profile.orders_per_hour <= 0:
        return [], []
    t = 0.0
    seq = 0
    ctrl = 0
    while True:
        t += rng.expovariate(profile.orders_per_hour / 3600.0)
        if t >= duration_s:
            break
        seq += 1
        order_id = f"SIMO{seq:07d}"
        location = profile.locations[rng.randrange(len(profile.locations))]
        lab_type = rng.weighted_choice(profile.lab_type_mix)
        mrn = mrns[rng.randrange(len(mrns))]
        order_ts = profile.start_ts_s * 1000 + int(t * 1000)
        tat_ms = max(1000, int(rng.lognormal(profile.tat_mu, profile.tat_sigma)))
        result_ts = order_ts + tat_ms

        ctrl += 1
        order_msg = "\r".join([
            _lab_msh("order", order_ts, f"SIMLC{ctrl:08d}", location),
            f"PID|1||{mrn}^^^SIM^MR||SIM^PATIENT",
            f"PV1|1|E|{location}^1^B01",
            f"ORC|NW|{order_id}",
            _obr(order_id, lab_type, order_ts),
        ])
        events.append((order_ts, ctrl, order_msg))

        prelim_ts = None
        if rng.random() < profile.prelim_fraction:
            prelim_ts = order_ts + max(500, int(tat_ms * 0.4))
            ctrl += 1
            prelim_msg = "\r".join([
                _lab_msh("result", prelim_ts, f"SIMLC{ctrl:08d}", location),
                f"PID|1||{mrn}^^^SIM^MR||SIM^PATIENT",
                f"PV1|1|E|{location}^1^B01",
                f"ORC|RE|{order_id}",
                _obr(order_id, lab_type, order_ts, status="P"),
                f"OBX|1|NM|{lab_type}^{lab_type}||{round(rng.uniform(0.1, 9.9), 2)}||||||P",
            ])
            events.append((prelim_ts, ctrl, prelim_msg))

        ctrl += 1
        result_msg = "\r".join([
            _lab_msh("result", result_ts, f"SIMLC{ctrl:08d}", location),
            f"PID|1||{mrn}^^^SIM^MR||SIM^PATIENT",
            f"PV1|1|E|{location}^1^B01",
            f"ORC|RE|{order_id}",
            _obr(order_id, lab_type, order_ts, status="F"),
            f"OBX|1|NM|{lab_type}^{lab_type}||{round(rng.uniform(0.1, 9.9), 2)}||||||F",
        ])
        events.append((result_ts, ctrl, result_msg))

        manifest.append({
            "order_id": order_id,
            "pt_mrn": mrn,
            "location": location,
            "lab_type_code": lab_type,
            "order_ts": order_ts,
            "prelim_ts": prelim_ts,
            "result_ts": result_ts,
            "tat_ms": tat_ms,
        })
    events.sort(key=lambda e: (e[0], e[1]))
    return [(ts, text) for ts, _, text in events], manifest


def gen_lab_stream(profile: LabFlowProfile, duration_s: int) -> tuple[bytes, list[dict]]:
    events, manifest = gen_lab_messages(profile, duration_s)
    return b"".join(encode_mllp(text) for _, text in events), manifest


# ---------------------------------------------------------------------------
# Load harness
# ---------------------------------------------------------------------------


@dataclass
class LoadReport:
    target_rate: float
    achieved_rate: float
    duration_s: float
    sent: int
    acked: int
    dead_lettered: int = 0
    max_queue_depth: int = 0

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)


def run_load(host: str, port: int, messages: list[str], target_rate: float,
             *, connections: int = 4, ack_timeout: float = 60.0,
             depth_probe=None) -> LoadReport:
    """Pace MLLP frames at target_rate over parallel connections.

    Frames are pipelined (the sender does not block on each ACK); a reader
    thread per connection counts returned ACK frames. dead_lettered and
    queue-depth accounting beyond max_queue_depth are the caller's to fill
    from platform counters.
    """
    if target_rate <= 0 or not messages:
        return LoadReport(target_rate=target_rate, achieved_rate=0.0,
                          duration_s=0.0, sent=0, acked=0)
    frames = [encode_mllp(m) for m in messages]
    acked = [0] * connections
    max_depth = [0]
    stop_probe = threading.Event()

    def probe_loop():
        while not stop_probe.wait(0.25):
            depth = depth_probe()
            if depth > max_depth[0]:
                max_depth[0] = depth

    def reader(sock, idx):
        dec = MllpDecoder()
        while True:
            try:
                chunk = sock.recv(65536)
            except OSError:
                return
            if not chunk:
                return
            acked[idx] += len(dec.feed(chunk))

    socks = []
    readers = []
    for i in range(connections):
        s = socket.create_connection((host, port), timeout=10)
        s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        socks.append(s)
        th = threading.Thread(target=reader, args=(s, i), daemon=True)
        th.start()
        readers.append(th)
    prober = None
    if depth_probe is not None:
        prober = threading.Thread(target=probe_loop, daemon=True)
        prober.start()

    t0 = time.monotonic()
    sent = 0
    try:
        for i, frame in enumerate(frames):
            due = t0 + i / target_rate
            delay = due - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            socks[i % connections].sendall(frame)
            sent += 1
    finally:
        for s in socks:
            try:
                s.shutdown(socket.SHUT_WR)
            except OSError:
                pass
    deadline = time.monotonic() + ack_timeout
    while sum(acked) < sent and time.monotonic() < deadline:
        time.sleep(0.05)
    elapsed = time.monotonic() - t0
    for s in socks:
        s.close()
    stop_probe.set()
    if prober:
        prober.join(timeout=1)
    return LoadReport(
        target_rate=target_rate,
        achieved_rate=sent / elapsed if elapsed > 0 else 0.0,
        duration_s=elapsed,
        sent=sent,
        acked=sum(acked),
        max_queue_depth=max_depth[0],
    )


# ---------------------------------------------------------------------------
# Frozen benchmark corpus
# ---------------------------------------------------------------------------

CORPUS_PROFILE = FleetProfile(
    units=("MICU", "PICU"),
    beds_per_unit=2,
    channel_plan=ADULT_MONITOR_PLAN,
    alarm_rate_per_hour=2.0,
    seed=CORPUS_SEED,
)


def freeze_benchmark_corpus(out_dir: str | Path, *, profile: FleetProfile = CORPUS_PROFILE,
                            sim_seconds: int = 3600) -> dict:
    """Materialize the canonical benchmark corpus; returns its manifest.

    Writes corpus.jsonl (one canonical JSON signal record per line) and
    manifest.json carrying the record count and sha256 of the jsonl bytes.
    """
    from .emissary import SourceConfig, normalize_monitor
    from .hl7 import parse_message
    from .topology import denormalize, signal_to_row

    cfg = SourceConfig(source_id="sim", default_utc_offset=0, stream_kind="monitor")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus_path = out_dir / "corpus.jsonl"
    digest = hashlib.sha256()
    count = 0
    units = set()
    with open(corpus_path, "w", encoding="utf-8") as f:
        for _, text in gen_monitor_messages(profile, sim_seconds):
            docs, dead = normalize_monitor(parse_message(text), cfg)
            assert not dead
            for doc in docs:
                row = signal_to_row(denormalize(doc))
                line = json.dumps(row, sort_keys=True, separators=(",", ":"))
                f.write(line + "\n")
                digest.update(line.encode("utf-8"))
                digest.update(b"\n")
                count += 1
                units.add(row["unit"])
    manifest = {
        "schema": "signal-v1",
        "seed": profile.seed,
        "sim_seconds": sim_seconds,
        "units": sorted(units),
        "record_count": count,
        "sha256": digest.hexdigest(),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def load_corpus(corpus_dir: str | Path) -> tuple[list[dict], dict]:
    corpus_dir = Path(corpus_dir)
    manifest = json.loads((corpus_dir / "manifest.json").read_text())
    records = []
    with open(corpus_dir / "corpus.jsonl", encoding="utf-8") as f:
        for line in f:
            records.append(json.loads(line))
    return records, manifest
