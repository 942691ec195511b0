"""Gateway tests: the exhaustive auth walk, params, and direct-call equality."""

import json
import urllib.error
import urllib.request

import pytest

from vitallake.gateway import ROUTES, Gateway, TokenAuthenticator
from vitallake.labmetrics import LabMetrics
from vitallake.emissary import LabDocument

T0 = 1488326400000
MIN = 60_000

TOKENS = [
    {"token_id": "lab-ops", "token": "lab-secret", "scopes": ["lab.read"]},
    {"token_id": "research", "token": "mon-secret", "scopes": ["monitor.read"]},
    {"token_id": "root", "token": "admin-secret", "scopes": ["admin"]},
]

LAB_ROUTES = ["/api/v1/lab/tat", "/api/v1/lab/outstanding", "/api/v1/lab/volumes"]
MON_ROUTES = ["/api/v1/monitor/alarms", "/api/v1/monitor/series"]

OK_QUERY = {
    "/api/v1/lab/tat": f"?t0=0&t1={T0 * 2}",
    "/api/v1/lab/outstanding": "?older_than=0",
    "/api/v1/lab/volumes": f"?t0={T0}&t1={T0 + 60 * MIN}&bucket={10 * MIN}",
    "/api/v1/monitor/alarms": f"?t0=0&t1={T0 * 2}",
    "/api/v1/monitor/series": f"?t0=0&t1={T0 * 2}&source=B01&channel=HR",
    "/api/v1/platform/health": "",
}


def lab_doc(order_id, msh_ts, status=None, order_ts=None, loc="ED"):
    hl7 = (f"MSH|^~\\&|LIS|{loc}|LAKE|HOSP|20170301120000||ORU^R01|C{order_id}{msh_ts}|P|2.3\r"
           f"PV1|1|E|{loc}^1^B01")
    return LabDocument(msh_ts=msh_ts, pt_mrn="SIM1", order_id=order_id,
                       lab_type_code="CBC", order_ts=order_ts or msh_ts,
                       result_status=status, hl7=hl7)


class _FakeMonitorAnalytics:
    def alarms(self, t0, t1, source=None, channel=None, gap_threshold_ms=30000):
        return [{"source": "B01", "channel": "ALARM-HR", "start_ts": T0,
                 "end_ts": T0 + 4000, "sample_count": 5}]

    def series(self, source, channel, t0, t1):
        return {"source": source, "channel": channel, "points": [[T0, 72.0]]}


@pytest.fixture(scope="module")
def gateway():
    metrics = LabMetrics()
    metrics.ingest(lab_doc("O1", T0))
    metrics.ingest(lab_doc("O1", T0 + 30 * MIN, "F", T0))
    metrics.ingest(lab_doc("O2", T0 + 5 * MIN))
    gw = Gateway(
        auth=TokenAuthenticator(TOKENS),
        labmetrics=metrics,
        monitor_analytics=_FakeMonitorAnalytics(),
        health_fn=lambda: {"status": "ok", "queue_depths": {"monitor.docs": 0}},
    )
    gw.start()
    yield gw, metrics
    gw.stop()


def get(port, path, token=None):
    req = urllib.request.Request(f"http://127.0.0.1:{port}{path}")
    if token:
        req.add_header("Authorization", f"Bearer {token}")
    try:
        with urllib.request.urlopen(req, timeout=5) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read())


class TestAuthWalk:
    def test_every_route_401_without_token(self, gateway):
        gw, _ = gateway
        for route in ROUTES:
            status, body = get(gw.port, route + OK_QUERY[route])
            assert status == 401, route
            assert body["error"] == "unauthenticated"

    def test_every_route_401_with_unknown_token(self, gateway):
        gw, _ = gateway
        for route in ROUTES:
            status, _ = get(gw.port, route + OK_QUERY[route], token="nope")
            assert status == 401, route

    def test_wrong_scope_403(self, gateway):
        gw, _ = gateway
        for route in LAB_ROUTES:
            status, body = get(gw.port, route + OK_QUERY[route], token="mon-secret")
            assert status == 403, route
            assert body["required"] == "lab.read"
        for route in MON_ROUTES:
            status, _ = get(gw.port, route + OK_QUERY[route], token="lab-secret")
            assert status == 403, route

    def test_correct_scope_200(self, gateway):
        gw, _ = gateway
        for route in LAB_ROUTES:
            assert get(gw.port, route + OK_QUERY[route], token="lab-secret")[0] == 200
        for route in MON_ROUTES:
            assert get(gw.port, route + OK_QUERY[route], token="mon-secret")[0] == 200
        for route in ROUTES:
            assert get(gw.port, route + OK_QUERY[route], token="admin-secret")[0] == 200, route

    def test_health_any_authenticated_scope(self, gateway):
        gw, _ = gateway
        for token in ("lab-secret", "mon-secret", "admin-secret"):
            status, body = get(gw.port, "/api/v1/platform/health", token=token)
            assert status == 200
            assert body["status"] == "ok"

    def test_unknown_route_still_needs_auth(self, gateway):
        gw, _ = gateway
        assert get(gw.port, "/api/v1/nope")[0] == 401
        assert get(gw.port, "/api/v1/nope", token="admin-secret")[0] == 404


class TestResponses:
    def test_tat_equals_direct_call(self, gateway):
        gw, metrics = gateway
        status, body = get(gw.port, f"/api/v1/lab/tat?t0=0&t1={T0 * 2}&group_by=location",
                           token="lab-secret")
        assert status == 200
        server_ts = body.pop("server_ts")
        assert server_ts > 0
        assert body == {"groups": metrics.tat_stats(0, T0 * 2, "location")}

    def test_outstanding_equals_direct_call(self, gateway):
        gw, metrics = gateway
        now = T0 + 60 * MIN
        status, body = get(gw.port, f"/api/v1/lab/outstanding?now={now}",
                           token="lab-secret")
        assert status == 200
        body.pop("server_ts")
        assert body == metrics.outstanding(now, 0, "none")
        assert body["total"] == 1  # O2 has no final result

    def test_volumes_equals_direct_call(self, gateway):
        gw, metrics = gateway
        q = f"?t0={T0}&t1={T0 + 60 * MIN}&bucket={10 * MIN}&group_by=location"
        status, body = get(gw.port, "/api/v1/lab/volumes" + q, token="lab-secret")
        assert status == 200
        body.pop("server_ts")
        assert body == metrics.volumes(T0, T0 + 60 * MIN, 10 * MIN, "location")

    def test_monitor_routes_payload(self, gateway):
        gw, _ = gateway
        status, body = get(gw.port, "/api/v1/monitor/alarms" + OK_QUERY["/api/v1/monitor/alarms"],
                           token="mon-secret")
        assert status == 200 and body["events"][0]["sample_count"] == 5
        status, body = get(gw.port, "/api/v1/monitor/series" + OK_QUERY["/api/v1/monitor/series"],
                           token="mon-secret")
        assert status == 200 and body["points"] == [[T0, 72.0]]

    def test_health_payload(self, gateway):
        gw, _ = gateway
        status, body = get(gw.port, "/api/v1/platform/health", token="admin-secret")
        assert status == 200
        assert body["status"] == "ok"
        assert "queue_depths" in body and "server_ts" in body


class TestBadParams:
    @pytest.mark.parametrize("path,field", [
        ("/api/v1/lab/tat?t0=abc&t1=2", "t0"),
        ("/api/v1/lab/tat?t1=2", "t0"),
        ("/api/v1/lab/tat?t0=5&t1=2", "t0"),
        ("/api/v1/lab/volumes?t0=1&t1=2", "bucket"),
        ("/api/v1/lab/volumes?t0=1&t1=2&bucket=0", "bucket"),
        ("/api/v1/lab/tat?t0=1&t1=2&group_by=bogus", "group_by"),
        ("/api/v1/lab/outstanding?older_than=-5", "older_than"),
        ("/api/v1/monitor/series?t0=1&t1=2&channel=HR", "source"),
    ])
    def test_field_level_400(self, gateway, path, field):
        gw, _ = gateway
        status, body = get(gw.port, path, token="admin-secret")
        assert status == 400
        assert body["error"] == "bad-parameter"
        assert body["field"] == field


def test_backend_unavailable_503():
    gw = Gateway(auth=TokenAuthenticator(TOKENS))  # nothing wired
    gw.start()
    try:
        status, body = get(gw.port, "/api/v1/lab/tat?t0=0&t1=9", token="lab-secret")
        assert status == 503
        assert body["error"] == "backend-unavailable"
        status, _ = get(gw.port, "/api/v1/platform/health", token="admin-secret")
        assert status == 503
    finally:
        gw.stop()


def test_cors_preflight_and_headers(gateway):
    gw, _ = gateway
    req = urllib.request.Request(
        f"http://127.0.0.1:{gw.port}/api/v1/lab/tat", method="OPTIONS",
        headers={"Origin": "http://console", "Access-Control-Request-Method": "GET"})
    with urllib.request.urlopen(req, timeout=5) as resp:
        assert resp.status == 204
        assert resp.headers["Access-Control-Allow-Origin"] == "*"
        assert "Authorization" in resp.headers["Access-Control-Allow-Headers"]
    req = urllib.request.Request(
        f"http://127.0.0.1:{gw.port}/api/v1/platform/health",
        headers={"Authorization": "Bearer admin-secret"})
    with urllib.request.urlopen(req, timeout=5) as resp:
        assert resp.headers["Access-Control-Allow-Origin"] == "*"


def test_token_file_roundtrip(tmp_path):
    path = tmp_path / "tokens.json"
    path.write_text(json.dumps(TOKENS))
    auth = TokenAuthenticator.from_file(path)
    principal = auth.authenticate("Bearer admin-secret")
    assert principal.token_id == "root"
    assert principal.allows("lab.read") and principal.allows("monitor.read")
    assert auth.authenticate("Bearer wrong") is None
    assert auth.authenticate(None) is None
    assert auth.authenticate("Basic xyz") is None
