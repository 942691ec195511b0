"""Authenticated HTTP/JSON query surface for lab metrics and analytics.

Bearer-token auth against a static token file; scopes gate route families
(lab.read for /lab/*, monitor.read for /monitor/*, admin for everything).
All routes are GET, all answers carry a server_ts for staleness display,
and every response body is byte-equivalent to the direct module call with
the same parameters. Clients poll; there is no push channel.

Token file format (JSON):

    [{"token_id": "ops", "token": "<secret>", "scopes": ["lab.read"]}]
"""

from __future__ import annotations

import hmac
import json
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from .labmetrics import GROUP_BYS

SCOPE_LAB = "lab.read"
SCOPE_MONITOR = "monitor.read"
SCOPE_ADMIN = "admin"

ROUTES: dict[str, str | None] = {
    "/api/v1/lab/tat": SCOPE_LAB,
    "/api/v1/lab/outstanding": SCOPE_LAB,
    "/api/v1/lab/volumes": SCOPE_LAB,
    "/api/v1/monitor/alarms": SCOPE_MONITOR,
    "/api/v1/monitor/series": SCOPE_MONITOR,
    "/api/v1/platform/health": None,  # any authenticated principal
}


@dataclass(frozen=True)
class Principal:
    token_id: str
    scopes: frozenset[str]

    def allows(self, scope: str | None) -> bool:
        return scope is None or scope in self.scopes or SCOPE_ADMIN in self.scopes


class BadParameter(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(message)
        self.field = field


class TokenAuthenticator:
    def __init__(self, entries: list[dict]):
        self._entries = [
            (e["token"], Principal(e["token_id"], frozenset(e["scopes"])))
            for e in entries
        ]

    @classmethod
    def from_file(cls, path: str | Path) -> "TokenAuthenticator":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def authenticate(self, authorization: str | None) -> Principal | None:
        if not authorization or not authorization.startswith("Bearer "):
            return None
        candidate = authorization[len("Bearer "):]
        # compare against every provisioned token; no early exit on match
        found = None
        for token, principal in self._entries:
            if hmac.compare_digest(token, candidate):
                found = principal
        return found


def _int_param(params: dict, name: str, default=None, required=False, minimum=None):
    values = params.get(name)
    if not values:
        if required:
            raise BadParameter(name, "required parameter is missing")
        return default
    try:
        value = int(values[0])
    except ValueError:
        raise BadParameter(name, f"not an integer: {values[0]!r}") from None
    if minimum is not None and value < minimum:
        raise BadParameter(name, f"must be >= {minimum}")
    return value


def _str_param(params: dict, name: str, default=None, required=False, choices=None):
    values = params.get(name)
    if not values:
        if required:
            raise BadParameter(name, "required parameter is missing")
        return default
    value = values[0]
    if choices is not None and value not in choices:
        raise BadParameter(name, f"must be one of {sorted(choices)}")
    return value


class Gateway:
    """Wires the HTTP surface to labmetrics, monitor analytics, and health."""

    def __init__(self, *, auth: TokenAuthenticator, labmetrics=None,
                 monitor_analytics=None, health_fn=None,
                 host: str = "127.0.0.1", port: int = 0,
                 clock=time.time):
        self.auth = auth
        self.labmetrics = labmetrics
        self.monitor_analytics = monitor_analytics
        self.health_fn = health_fn
        self.clock = clock
        gateway = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, fmt, *args):  # silence request logging
                pass

            def do_GET(self):
                gateway._handle(self)

            def do_OPTIONS(self):
                # CORS preflight for the browser console; carries no
                # credentials, so it is answered before authentication
                self.send_response(204)
                self.send_header("Access-Control-Allow-Origin", "*")
                self.send_header("Access-Control-Allow-Methods", "GET, OPTIONS")
                self.send_header("Access-Control-Allow-Headers", "Authorization")
                self.send_header("Access-Control-Max-Age", "600")
                self.send_header("Content-Length", "0")
                self.end_headers()

        self._server = ThreadingHTTPServer((host, port), Handler)
        self._thread: threading.Thread | None = None
        self.request_count = 0

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    def start(self) -> None:
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        name="gateway", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    # -- request handling ----------------------------------------------------

    def _handle(self, req: BaseHTTPRequestHandler) -> None:
        self.request_count += 1
        url = urlparse(req.path)
        principal = self.auth.authenticate(req.headers.get("Authorization"))
        if principal is None:
            self._send(req, 401, {"error": "unauthenticated"},
                       extra={"WWW-Authenticate": "Bearer"})
            return
        scope = ROUTES.get(url.path, "__missing__")
        if scope == "__missing__":
            self._send(req, 404, {"error": "unknown route"})
            return
        if not principal.allows(scope):
            self._send(req, 403, {"error": "insufficient scope",
                                  "required": scope})
            return
        params = parse_qs(url.query)
        try:
            body = self._dispatch(url.path, params)
        except BadParameter as exc:
            self._send(req, 400, {"error": "bad-parameter", "field": exc.field,
                                  "message": str(exc)})
            return
        except Exception as exc:
            self._send(req, 503, {"error": "backend-unavailable", "detail": str(exc)})
            return
        body["server_ts"] = int(self.clock() * 1000)
        self._send(req, 200, body)

    def _dispatch(self, path: str, params: dict) -> dict:
        if path == "/api/v1/platform/health":
            if self.health_fn is None:
                raise RuntimeError("health source not wired")
            return self.health_fn()
        if path.startswith("/api/v1/lab/"):
            if self.labmetrics is None:
                raise RuntimeError("lab metrics not wired")
            return self._lab(path, params)
        if self.monitor_analytics is None:
            raise RuntimeError("monitor analytics not wired")
        return self._monitor(path, params)

    def _lab(self, path: str, params: dict) -> dict:
        group_by = _str_param(params, "group_by", default="none", choices=GROUP_BYS)
        if path == "/api/v1/lab/tat":
            t0 = _int_param(params, "t0", required=True)
            t1 = _int_param(params, "t1", required=True)
            if t0 >= t1:
                raise BadParameter("t0", "t0 must be < t1")
            return {"groups": self.labmetrics.tat_stats(t0, t1, group_by)}
        if path == "/api/v1/lab/outstanding":
            now = _int_param(params, "now", default=int(self.clock() * 1000))
            older_than = _int_param(params, "older_than", default=0, minimum=0)
            return self.labmetrics.outstanding(now, older_than, group_by)
        t0 = _int_param(params, "t0", required=True)
        t1 = _int_param(params, "t1", required=True)
        if t0 >= t1:
            raise BadParameter("t0", "t0 must be < t1")
        bucket = _int_param(params, "bucket", required=True, minimum=1)
        return self.labmetrics.volumes(t0, t1, bucket, group_by)

    def _monitor(self, path: str, params: dict) -> dict:
        t0 = _int_param(params, "t0", required=True)
        t1 = _int_param(params, "t1", required=True)
        if t0 > t1:
            raise BadParameter("t0", "t0 must be <= t1")
        if path == "/api/v1/monitor/alarms":
            gap = _int_param(params, "gap", default=30_000, minimum=1)
            return {"events": self.monitor_analytics.alarms(
                t0, t1,
                source=_str_param(params, "source"),
                channel=_str_param(params, "channel"),
                gap_threshold_ms=gap)}
        source = _str_param(params, "source", required=True)
        channel = _str_param(params, "channel", required=True)
        return self.monitor_analytics.series(source, channel, t0, t1)

    def _send(self, req: BaseHTTPRequestHandler, status: int, body: dict,
              extra: dict | None = None) -> None:
        payload = json.dumps(body).encode("utf-8")
        req.send_response(status)
        req.send_header("Content-Type", "application/json")
        req.send_header("Access-Control-Allow-Origin", "*")
        req.send_header("Content-Length", str(len(payload)))
        for k, v in (extra or {}).items():
            req.send_header(k, v)
        req.end_headers()
        req.wfile.write(payload)
