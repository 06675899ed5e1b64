"""JSON-over-HTTP login service.

Endpoints::

    POST /v1/login/start     {username, channel}            -> {session_id, state}
    POST /v1/login/otpsc     {session_id, otpsc}
                             | {session_id, spl_passcode, sc} -> {state, outcome}
    POST /v1/login/password  {session_id, password}          -> {state, token} | {state, outcome}
    GET  /v1/testing/inbox/<number>                          (test mode only)

The AAIP is always the socket peer of the request. Forwarding headers are
never consulted.
"""

from __future__ import annotations

import json
import logging
import secrets
import socket
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any, Callable, Mapping
from urllib.parse import unquote, urlsplit

from jasf.channels import RequestContext, SmsGateway, observe_client_ip
from jasf.digest import DEFAULT_ITERATIONS
from jasf.errors import JasfError, MissingSourceAddress, SessionExpired, StateError
from jasf.protocol import (
    AccountStore,
    AuthResult,
    ChannelChoice,
    JasmProtocol,
    LoginSession,
    ProtocolConfig,
    State,
    new_token,
)
from jasf.store import FileAccountStore

log = logging.getLogger(__name__)


class ConfigError(JasfError):
    pass


@dataclass(frozen=True)
class ServiceConfig:
    account_store: Path
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    host: str = "127.0.0.1"
    port: int = 8080
    sms_log: Path | None = None
    test_mode: bool = False
    digest_iterations: int = DEFAULT_ITERATIONS

    @classmethod
    def load(cls, path: str | Path) -> ServiceConfig:
        """Read a JSON config; relative paths are resolved against its directory."""
        path = Path(path)
        try:
            with path.open(encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc, base=path.parent)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any], base: Path = Path(".")) -> ServiceConfig:
        if not isinstance(doc, Mapping) or "account_store" not in doc:
            raise ConfigError("config must be an object with an 'account_store' path")
        try:
            host, port = parse_listen(doc.get("listen", "127.0.0.1:8080"))
            sms_log = doc.get("sms_log")
            return cls(
                account_store=base / doc["account_store"],
                protocol=ProtocolConfig.from_dict(doc.get("protocol", {})),
                host=host,
                port=port,
                sms_log=base / sms_log if sms_log else None,
                test_mode=bool(doc.get("test_mode", False)),
                digest_iterations=int(doc.get("digest_iterations", DEFAULT_ITERATIONS)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def parse_listen(listen: str) -> tuple[str, int]:
    host, sep, port = str(listen).rpartition(":")
    if not sep or not host or not port.isdigit() or int(port) > 65535:
        raise ValueError(f"listen address must look like HOST:PORT, got {listen!r}")
    return host.strip("[]"), int(port)


class BadRequest(JasfError):
    pass


def _parse_body(body: bytes | None) -> dict[str, Any]:
    try:
        data = json.loads(body or b"")
    except ValueError as exc:
        raise BadRequest("body is not valid JSON") from exc
    if not isinstance(data, dict):
        raise BadRequest("body must be a JSON object")
    return data


def _field(data: Mapping[str, Any], name: str) -> str:
    value = data.get(name)
    if not isinstance(value, str):
        raise BadRequest(f"missing or non-string field {name!r}")
    return value


def _error(status: int, message: str) -> tuple[int, dict[str, str]]:
    return status, {"error": message}


class AuthService:
    """Transport-independent request handling.

    ``handle`` takes the raw request plus the socket peer address and returns
    ``(status, json_payload)``. Requests for one session are serialized by a
    per-session lock.
    """

    def __init__(
        self,
        store: AccountStore,
        gateway: SmsGateway,
        config: ProtocolConfig | None = None,
        *,
        test_mode: bool = False,
        clock: Callable[[], float] = time.time,
        rng: Any = None,
    ) -> None:
        self.store = store
        self.gateway = gateway
        self.config = config or ProtocolConfig()
        self.test_mode = test_mode
        self.clock = clock
        self.rng = rng if rng is not None else secrets.SystemRandom()
        self.engine = JasmProtocol(store, gateway, self.config, self.rng)
        self.sessions: dict[str, LoginSession] = {}
        self.tokens: dict[str, str] = {}
        self._session_locks: dict[str, threading.Lock] = {}
        self._lock = threading.Lock()

    def handle(
        self,
        method: str,
        path: str,
        body: bytes | None = None,
        peer: str | None = None,
        headers: Mapping[str, str] | None = None,
    ) -> tuple[int, Any]:
        route = urlsplit(path).path
        ctx = RequestContext(peer=peer, headers=dict(headers or {}))
        try:
            if route.startswith("/v1/testing/inbox/"):
                if method != "GET":
                    return _error(405, "method not allowed")
                return self._inbox(unquote(route[len("/v1/testing/inbox/"):]))
            handlers = {
                "/v1/login/start": self._start,
                "/v1/login/otpsc": self._otpsc,
                "/v1/login/password": self._password,
            }
            handler = handlers.get(route)
            if handler is None:
                return _error(404, "not found")
            if method != "POST":
                return _error(405, "method not allowed")
            return handler(_parse_body(body), ctx)
        except BadRequest as exc:
            return _error(400, str(exc))
        except MissingSourceAddress as exc:
            return _error(400, str(exc))
        except OSError:
            log.exception("store failure")
            return _error(500, "internal error")

    def _start(self, data: dict[str, Any], ctx: RequestContext) -> tuple[int, Any]:
        username = _field(data, "username")
        try:
            channel = ChannelChoice(_field(data, "channel"))
        except ValueError:
            raise BadRequest("channel must be one of primary, secondary, spl") from None
        ip = observe_client_ip(ctx)
        session = self.engine.begin_login(username, channel, ip, self.clock())
        with self._lock:
            self.sessions[session.id] = session
            self._session_locks[session.id] = threading.Lock()
        return 200, {"session_id": session.id, "state": session.state.value}

    def _session(self, data: dict[str, Any]) -> tuple[LoginSession | None, threading.Lock | None]:
        session_id = _field(data, "session_id")
        with self._lock:
            return self.sessions.get(session_id), self._session_locks.get(session_id)

    def _otpsc(self, data: dict[str, Any], ctx: RequestContext) -> tuple[int, Any]:
        session, lock = self._session(data)
        if session is None:
            return _error(404, "unknown session")
        ip = observe_client_ip(ctx)
        with lock:
            try:
                if "otpsc" in data:
                    outcome = self.engine.submit_otpsc(session, _field(data, "otpsc"), ip, self.clock())
                elif "spl_passcode" in data:
                    outcome = self.engine.submit_spl_otpsc(
                        session, _field(data, "spl_passcode"), _field(data, "sc"), ip, self.clock()
                    )
                else:
                    raise BadRequest("expected 'otpsc' or 'spl_passcode' + 'sc'")
            except StateError as exc:
                return _error(409, str(exc))
            except SessionExpired:
                return _error(410, "session expired")
            return 200, self._state_payload(session, outcome=outcome.kind.value)

    def _password(self, data: dict[str, Any], ctx: RequestContext) -> tuple[int, Any]:
        session, lock = self._session(data)
        if session is None:
            return _error(404, "unknown session")
        password = _field(data, "password")
        with lock:
            try:
                result = self.engine.submit_password(session, password, self.clock())
            except StateError as exc:
                return _error(409, str(exc))
            except SessionExpired:
                return _error(410, "session expired")
            if result is AuthResult.AUTHENTICATED:
                token = new_token(self.rng)
                with self._lock:
                    self.tokens[token] = session.username
                return 200, {"state": session.state.value, "token": token}
            return 200, self._state_payload(session, outcome=result.value)

    def _inbox(self, number: str) -> tuple[int, Any]:
        if not self.test_mode:
            return _error(403, "test mode is off")
        return 200, [m.to_dict() for m in self.gateway.read_inbox(number)]

    @staticmethod
    def _state_payload(session: LoginSession, **extra: Any) -> dict[str, Any]:
        payload = {"state": session.state.value, **extra}
        if session.state is State.TERMINATED and session.reason is not None:
            payload["reason"] = session.reason.value
        return payload


def build_service(config: ServiceConfig, **kwargs: Any) -> AuthService:
    store = FileAccountStore.open(config.account_store)
    gateway = SmsGateway(config.sms_log)
    return AuthService(store, gateway, config.protocol, test_mode=config.test_mode, **kwargs)


def make_server(service: AuthService, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    """Bind an HTTP server for *service*; the caller runs ``serve_forever``."""

    class Handler(BaseHTTPRequestHandler):
        server_version = "jasf/0.1"

        def _dispatch(self) -> None:
            length = int(self.headers.get("Content-Length") or 0)
            body = self.rfile.read(length) if length else b""
            status, payload = service.handle(
                self.command, self.path, body, peer=self.client_address[0], headers=dict(self.headers)
            )
            data = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        do_GET = do_POST = do_PUT = do_DELETE = _dispatch

        def log_message(self, format: str, *args: Any) -> None:
            log.debug("%s - %s", self.address_string(), format % args)

    server_cls = ThreadingHTTPServer
    if ":" in host:

        class V6Server(ThreadingHTTPServer):
            address_family = socket.AF_INET6

        server_cls = V6Server
    server = server_cls((host, port), Handler)
    server.daemon_threads = True
    return server
