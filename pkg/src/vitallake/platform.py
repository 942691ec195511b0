"""Single-process platform wiring: listeners -> emissary -> queue -> workers.

One Platform owns the MLLP TCP listeners (monitor and lab ingress), the
durable queue, the three topology workers, the lab metrics state, and the
HTTP gateway. Everything lives under one data directory:

    data/lakeq/...        durable topic log + consumer cursors
    data/archive/...      container files (monitor/raw/lab)
    data/labmetrics/...   lab state journal
    data/emissary/...     publish spill journal

Each inbound frame is ACKed only after its documents are durably queued
(commit-accept). The topology consumers can be paused and resumed while
ingest continues — the queue buffers the gap.
"""

from __future__ import annotations

import json
import os
import socket
import socketserver
import threading
import time
from dataclasses import dataclass, replace
from pathlib import Path

from .emissary import Emissary, SourceConfig, TOPIC_DEADLETTER, TOPIC_LAB, TOPIC_MONITOR
from .gateway import Gateway, TokenAuthenticator
from .hl7 import MllpDecoder, build_ack_text, fast_control_id
from .labmetrics import LabMetrics
from .lakeq import LakeQueue
from .analytics import MonitorAnalytics
from .topology import (
    LabRouter,
    MonitorArchiver,
    PartitionedArchive,
    PipelineConfig,
    RawCopyArchiver,
)

_ENV_PREFIX = "VITALLAKE_"


@dataclass(frozen=True)
class PlatformConfig:
    data_dir: str = "data"
    host: str = "127.0.0.1"
    monitor_port: int = 2575
    lab_port: int = 2576
    gateway_port: int = 8080
    token_file: str | None = None
    default_utc_offset: int = 0  # minutes, applied when HL7 ts has no zone
    flush_window: float = 0.0
    batch_records: int = 5000
    codec: str = "lz-block"
    retention_bytes: int | None = None

    @classmethod
    def from_file(cls, path: str | Path) -> "PlatformConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def with_env_overrides(self, env=os.environ) -> "PlatformConfig":
        """VITALLAKE_HOST, VITALLAKE_GATEWAY_PORT, ... override file values."""
        overrides = {}
        for name, field_def in self.__dataclass_fields__.items():
            raw = env.get(_ENV_PREFIX + name.upper())
            if raw is None:
                continue
            kind = field_def.type
            if "int" in kind:
                overrides[name] = int(raw)
            elif "float" in kind:
                overrides[name] = float(raw)
            else:
                overrides[name] = raw
        return replace(self, **overrides)


class _MllpListener(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, host: str, port: int, emissary: Emissary):
        self.emissary = emissary
        self._ack_seq = 0
        self._ack_lock = threading.Lock()
        super().__init__((host, port), _MllpHandler)

    def next_ack_id(self) -> str:
        with self._ack_lock:
            self._ack_seq += 1
            return f"ACK{self._ack_seq:09d}"


class _MllpHandler(socketserver.BaseRequestHandler):
    def handle(self):
        self.request.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        decoder = MllpDecoder()
        server: _MllpListener = self.server
        from .hl7 import encode_mllp

        while True:
            try:
                chunk = self.request.recv(65536)
            except OSError:
                return
            if not chunk:
                return
            for text in decoder.feed(chunk):
                server.emissary.process(text)  # durable publish precedes ACK
                ack_ts = time.strftime("%Y%m%d%H%M%S", time.gmtime()) + "+0000"
                ack = build_ack_text(fast_control_id(text), ack_ts, server.next_ack_id())
                try:
                    self.request.sendall(encode_mllp(ack))
                except OSError:
                    return


class Platform:
    """Owns and supervises every component; start() is non-blocking."""

    def __init__(self, cfg: PlatformConfig):
        self.cfg = cfg
        data = Path(cfg.data_dir)
        self.queue = LakeQueue(data / "lakeq", flush_window=cfg.flush_window,
                               retention_bytes=cfg.retention_bytes)
        self.archive = PartitionedArchive(data / "archive")
        self.labmetrics = LabMetrics(journal_dir=data / "labmetrics")
        self.monitor_emissary = Emissary(
            self.queue,
            SourceConfig("monitor-ingress", cfg.default_utc_offset, "monitor"),
            spill_dir=data / "emissary")
        self.lab_emissary = Emissary(
            self.queue,
            SourceConfig("lab-ingress", cfg.default_utc_offset, "lab"),
            spill_dir=data / "emissary")
        self.monitor_listener = _MllpListener(cfg.host, cfg.monitor_port,
                                              self.monitor_emissary)
        self.lab_listener = _MllpListener(cfg.host, cfg.lab_port, self.lab_emissary)
        self.analytics = MonitorAnalytics(self.archive)
        self.gateway: Gateway | None = None
        if cfg.token_file:
            self.gateway = Gateway(
                auth=TokenAuthenticator.from_file(cfg.token_file),
                labmetrics=self.labmetrics,
                monitor_analytics=self.analytics,
                health_fn=self.health,
                host=cfg.host, port=cfg.gateway_port)
        self._listener_threads: list[threading.Thread] = []
        self._workers: list = []
        self._worker_threads: list[threading.Thread] = []
        self._topology_stop = threading.Event()
        self._started = False

    # -- lifecycle -------------------------------------------------------------

    @property
    def monitor_port(self) -> int:
        return self.monitor_listener.server_address[1]

    @property
    def lab_port(self) -> int:
        return self.lab_listener.server_address[1]

    @property
    def gateway_port(self) -> int | None:
        return self.gateway.port if self.gateway else None

    def start(self) -> None:
        for name, listener in (("mllp-monitor", self.monitor_listener),
                               ("mllp-lab", self.lab_listener)):
            th = threading.Thread(target=listener.serve_forever, name=name, daemon=True)
            th.start()
            self._listener_threads.append(th)
        self.start_topology()
        if self.gateway:
            self.gateway.start()
        self._started = True

    def start_topology(self) -> None:
        pipe_cfg = PipelineConfig(batch_records=self.cfg.batch_records,
                                  codec=self.cfg.codec)
        self._topology_stop = threading.Event()
        self._workers = [
            MonitorArchiver(self.queue, self.archive, pipe_cfg),
            RawCopyArchiver(self.queue, self.archive, pipe_cfg),
            LabRouter(self.queue, self.labmetrics, self.archive, pipe_cfg),
        ]
        self._worker_threads = []
        for worker in self._workers:
            th = threading.Thread(target=worker.run, args=(self._topology_stop,),
                                  name=worker.group, daemon=True)
            th.start()
            self._worker_threads.append(th)

    def stop_topology(self) -> None:
        self._topology_stop.set()
        for th in self._worker_threads:
            th.join(timeout=30)
        self._worker_threads = []

    def stop(self) -> None:
        self.monitor_listener.shutdown()
        self.lab_listener.shutdown()
        self.monitor_listener.server_close()
        self.lab_listener.server_close()
        for th in self._listener_threads:
            th.join(timeout=5)
        self.stop_topology()
        if self.gateway:
            self.gateway.stop()
        self.labmetrics.close()
        self.queue.close()
        self._started = False

    # -- observation -------------------------------------------------------------

    def consumer_lag(self) -> dict[str, dict[str, int]]:
        out: dict[str, dict[str, int]] = {}
        for topic, groups in ((TOPIC_MONITOR, ("monitor-archive", "raw-archive")),
                              (TOPIC_LAB, ("lab-route",))):
            hw = self.queue.high_water(topic)
            out[topic] = {"high_water": hw}
            for group in groups:
                out[topic][group] = hw - self.queue.committed(group, topic)
        return out

    def max_lag(self) -> int:
        lag = 0
        for topic, groups in self.consumer_lag().items():
            lag = max(lag, *(v for k, v in groups.items() if k != "high_water"), 0)
        return lag

    def health(self) -> dict:
        return {"status": "ok", "queue_depths": self.consumer_lag()}

    def deadletter_count(self) -> int:
        return self.queue.high_water(TOPIC_DEADLETTER)

    def drain(self, timeout: float = 120.0, settle: float = 0.3) -> bool:
        """Wait until every consumer group has committed to high water and
        stayed there for `settle` seconds."""
        deadline = time.monotonic() + timeout
        stable_since = None
        while time.monotonic() < deadline:
            if self.max_lag() == 0:
                if stable_since is None:
                    stable_since = time.monotonic()
                elif time.monotonic() - stable_since >= settle:
                    return True
            else:
                stable_since = None
            time.sleep(0.05)
        return False

    def run_forever(self) -> None:
        try:
            while True:
                time.sleep(1)
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()
