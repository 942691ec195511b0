"""End-to-end platform tests over real sockets, plus config handling."""

import json
import socket
import time
import urllib.request

import pytest

from vitallake.hl7 import MllpDecoder, encode_mllp, parse_message
from vitallake.platform import Platform, PlatformConfig
from vitallake.simgen import FleetProfile, LabFlowProfile, gen_lab_messages, gen_monitor_messages

TOKENS = [{"token_id": "root", "token": "t-admin", "scopes": ["admin"]}]


@pytest.fixture()
def platform(tmp_path):
    token_file = tmp_path / "tokens.json"
    token_file.write_text(json.dumps(TOKENS))
    cfg = PlatformConfig(
        data_dir=str(tmp_path / "data"),
        monitor_port=0, lab_port=0, gateway_port=0,
        token_file=str(token_file),
        batch_records=500,
    )
    p = Platform(cfg)
    p.start()
    yield p
    p.stop()


def send_frames(port, texts, chunk=8192):
    """Send MLLP frames on one connection, return ACK count."""
    payload = b"".join(encode_mllp(t) for t in texts)
    acks = 0
    dec = MllpDecoder()
    with socket.create_connection(("127.0.0.1", port), timeout=10) as s:
        s.sendall(payload)
        s.shutdown(socket.SHUT_WR)
        while True:
            data = s.recv(65536)
            if not data:
                break
            acks += len(dec.feed(data))
    return acks


class TestEndToEnd:
    def test_monitor_path_socket_to_archive(self, platform):
        texts = [t for _, t in gen_monitor_messages(
            FleetProfile(units=("MICU", "PICU"), beds_per_unit=2, seed=11), 30)]
        acks = send_frames(platform.monitor_port, texts)
        assert acks == len(texts)
        assert platform.drain(timeout=30)
        em = platform.monitor_emissary.stats
        assert em.frames_in == len(texts)
        assert em.messages_dead == 0
        assert platform.archive.count("raw") == len(texts)
        assert platform.archive.count("monitor") == em.documents_out
        assert platform.deadletter_count() == 0

    def test_acks_are_commit_accept(self, platform):
        texts = [t for _, t in gen_monitor_messages(FleetProfile(seed=3), 2)]
        payload = b"".join(encode_mllp(t) for t in texts)
        dec = MllpDecoder()
        acks = []
        with socket.create_connection(("127.0.0.1", platform.monitor_port), timeout=10) as s:
            s.sendall(payload)
            s.shutdown(socket.SHUT_WR)
            while True:
                data = s.recv(65536)
                if not data:
                    break
                acks.extend(dec.feed(data))
        for ack_text, orig in zip(acks, texts):
            ack = parse_message(ack_text)
            assert ack.get("MSA-1") == "AA"
            assert ack.get("MSA-2") == parse_message(orig).header.control_id

    def test_lab_path_to_metrics_and_gateway(self, platform):
        events, manifest = gen_lab_messages(
            LabFlowProfile(orders_per_hour=400, seed=12), 1800)
        acks = send_frames(platform.lab_port, [t for _, t in events])
        assert acks == len(events)
        assert platform.drain(timeout=30)
        assert platform.labmetrics.order_count() == len(manifest)
        assert platform.archive.count("lab") == len(events)
        # gateway answers from the same state
        url = (f"http://127.0.0.1:{platform.gateway_port}/api/v1/lab/tat"
               f"?t0=0&t1=99999999999999")
        req = urllib.request.Request(url, headers={"Authorization": "Bearer t-admin"})
        with urllib.request.urlopen(req, timeout=5) as resp:
            body = json.loads(resp.read())
        assert body["groups"]["all"]["count"] == len(manifest)

    def test_garbled_frame_dead_letters(self, platform):
        send_frames(platform.monitor_port, ["MSH|^~\\&|bogus"])
        assert platform.drain(timeout=10)
        assert platform.monitor_emissary.stats.messages_dead == 1
        assert platform.deadletter_count() == 1

    def test_pause_resume_topology_buffers(self, platform):
        platform.stop_topology()
        texts = [t for _, t in gen_monitor_messages(FleetProfile(seed=5), 20)]
        acks = send_frames(platform.monitor_port, texts)
        assert acks == len(texts)  # ingest keeps accepting while halted
        assert platform.max_lag() > 0
        assert platform.archive.count("raw") == 0
        platform.start_topology()
        assert platform.drain(timeout=30)
        assert platform.archive.count("raw") == len(texts)

    def test_health_endpoint_shape(self, platform):
        url = f"http://127.0.0.1:{platform.gateway_port}/api/v1/platform/health"
        req = urllib.request.Request(url, headers={"Authorization": "Bearer t-admin"})
        with urllib.request.urlopen(req, timeout=5) as resp:
            body = json.loads(resp.read())
        assert body["status"] == "ok"
        assert "monitor.docs" in body["queue_depths"]
        assert "server_ts" in body


class TestRestartRecovery:
    def test_full_platform_restart_resumes(self, tmp_path):
        cfg = PlatformConfig(data_dir=str(tmp_path / "data"),
                             monitor_port=0, lab_port=0, gateway_port=0)
        p1 = Platform(cfg)
        p1.start()
        texts = [t for _, t in gen_monitor_messages(FleetProfile(seed=21), 25)]
        send_frames(p1.monitor_port, texts[:15])
        p1.drain(timeout=30)
        p1.stop()
        p2 = Platform(cfg)
        p2.start()
        send_frames(p2.monitor_port, texts[15:])
        assert p2.drain(timeout=30)
        assert p2.archive.count("raw") == len(texts)
        p2.stop()


class TestConfig:
    def test_from_file_and_env_overrides(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"data_dir": "/tmp/x", "monitor_port": 9999}))
        cfg = PlatformConfig.from_file(path)
        assert cfg.monitor_port == 9999 and cfg.data_dir == "/tmp/x"
        cfg2 = cfg.with_env_overrides({"VITALLAKE_MONITOR_PORT": "1234",
                                       "VITALLAKE_TOKEN_FILE": "/etc/tok.json",
                                       "VITALLAKE_FLUSH_WINDOW": "0.002"})
        assert cfg2.monitor_port == 1234
        assert cfg2.token_file == "/etc/tok.json"
        assert cfg2.flush_window == 0.002

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"nope": 1}))
        with pytest.raises(ValueError):
            PlatformConfig.from_file(path)
