"""Minimal HTTP client for the login service."""

from __future__ import annotations

import http.client
import json
from typing import Any
from urllib.parse import quote, urlsplit


class JasfClient:
    """Talks to one server. ``source_ip`` pins the local address the server will see."""

    def __init__(self, base_url: str, source_ip: str | None = None, timeout: float = 10.0) -> None:
        parts = urlsplit(base_url)
        if parts.scheme != "http" or not parts.hostname:
            raise ValueError(f"expected an http://host:port URL, got {base_url!r}")
        self.host = parts.hostname
        self.port = parts.port or 80
        self.source_ip = source_ip
        self.timeout = timeout

    def request(self, method: str, path: str, payload: Any = None) -> tuple[int, Any]:
        source = (self.source_ip, 0) if self.source_ip else None
        conn = http.client.HTTPConnection(self.host, self.port, timeout=self.timeout, source_address=source)
        try:
            body = json.dumps(payload).encode() if payload is not None else None
            headers = {"Content-Type": "application/json"} if body is not None else {}
            conn.request(method, path, body=body, headers=headers)
            resp = conn.getresponse()
            raw = resp.read()
            return resp.status, json.loads(raw) if raw else None
        finally:
            conn.close()

    def start(self, username: str, channel: str = "primary") -> tuple[int, Any]:
        return self.request("POST", "/v1/login/start", {"username": username, "channel": channel})

    def otpsc(self, session_id: str, otpsc: str) -> tuple[int, Any]:
        return self.request("POST", "/v1/login/otpsc", {"session_id": session_id, "otpsc": otpsc})

    def spl(self, session_id: str, passcode: str, sc: str) -> tuple[int, Any]:
        return self.request(
            "POST", "/v1/login/otpsc", {"session_id": session_id, "spl_passcode": passcode, "sc": sc}
        )

    def password(self, session_id: str, password: str) -> tuple[int, Any]:
        return self.request("POST", "/v1/login/password", {"session_id": session_id, "password": password})

    def inbox(self, number: str) -> tuple[int, Any]:
        return self.request("GET", "/v1/testing/inbox/" + quote(number, safe=""))
