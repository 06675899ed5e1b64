"""Virtual SMS gateway and server-side observation of the client IP.

The gateway is lossless and instantaneous. Every message lands in exactly one
inbox and in the global log, which can be mirrored to a JSON Lines file.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping

from jasf.errors import MissingSourceAddress
from jasf.types import IpAddress, MobileNumber

AAIP_NOTICE_TEMPLATE = (
    "JASF: OTPSC received from IP {ip}. If this is not your IP, do NOT enter your password."
)
OTP_DELIVERY_TEMPLATE = "JASF: your one-time passcode is {otp}."
WRONG_SC_ALERT_TEMPLATE = (
    "JASF: wrong secret code entered with your valid OTP from IP {ip}. "
    "Your OTP may be compromised."
)

_AAIP_RE = re.compile(r"^JASF: OTPSC received from IP (\S+)\. If this is not your IP")
_OTP_RE = re.compile(r"^JASF: your one-time passcode is ([0-9]+)\.$")


class SmsKind(str, Enum):
    OTP_DELIVERY = "otp_delivery"
    AAIP_NOTICE = "aaip_notice"
    WRONG_SC_ALERT = "wrong_sc_alert"


@dataclass(frozen=True, slots=True)
class SmsMessage:
    to: MobileNumber
    kind: SmsKind
    body: str
    sent_at: float
    seq: int

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "to": self.to.digits,
            "kind": self.kind.value,
            "body": self.body,
            "sent_at": self.sent_at,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> SmsMessage:
        return cls(
            to=MobileNumber(data["to"]),
            kind=SmsKind(data["kind"]),
            body=data["body"],
            sent_at=float(data["sent_at"]),
            seq=int(data["seq"]),
        )


def aaip_notice_body(ip: IpAddress) -> str:
    return AAIP_NOTICE_TEMPLATE.format(ip=ip.text)


def wrong_sc_alert_body(ip: IpAddress) -> str:
    return WRONG_SC_ALERT_TEMPLATE.format(ip=ip.text)


def otp_delivery_body(otp_value: str) -> str:
    return OTP_DELIVERY_TEMPLATE.format(otp=otp_value)


def parse_aaip_notice(body: str) -> IpAddress | None:
    """Extract the IP from an AAIP notice body, or None if *body* is not one."""
    m = _AAIP_RE.match(body.strip())
    if m is None:
        return None
    return IpAddress(m.group(1))


def parse_otp_delivery(body: str) -> str | None:
    m = _OTP_RE.match(body.strip())
    return m.group(1) if m else None


class SmsGateway:
    """In-memory SMS gateway with per-number inboxes.

    Safe for concurrent senders: sequence numbers are assigned under a lock
    and inboxes are append-only.
    """

    def __init__(self, log_path: str | Path | None = None) -> None:
        self._lock = threading.Lock()
        self._seq = 0
        self._inboxes: dict[str, list[SmsMessage]] = {}
        self._log: list[SmsMessage] = []
        self.log_path = Path(log_path) if log_path is not None else None

    def send(self, to: MobileNumber, kind: SmsKind, body: str, now: float) -> SmsMessage:
        with self._lock:
            self._seq += 1
            msg = SmsMessage(to=to, kind=SmsKind(kind), body=body, sent_at=float(now), seq=self._seq)
            self._inboxes.setdefault(to.digits, []).append(msg)
            self._log.append(msg)
            if self.log_path is not None:
                with self.log_path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(msg.to_dict(), sort_keys=True) + "\n")
        return msg

    def read_inbox(self, number: MobileNumber | str) -> list[SmsMessage]:
        key = number.digits if isinstance(number, MobileNumber) else str(number)
        with self._lock:
            return list(self._inboxes.get(key, ()))

    @property
    def log(self) -> list[SmsMessage]:
        with self._lock:
            return list(self._log)

    def messages_after(self, seq: int) -> list[SmsMessage]:
        with self._lock:
            return [m for m in self._log if m.seq > seq]

    @property
    def last_seq(self) -> int:
        return self._seq


def send_sms(gateway: SmsGateway, to: MobileNumber, kind: SmsKind, body: str, now: float) -> SmsMessage:
    return gateway.send(to, kind, body, now)


def read_inbox(gateway: SmsGateway, number: MobileNumber | str) -> list[SmsMessage]:
    return gateway.read_inbox(number)


def load_sms_log(path: str | Path) -> list[SmsMessage]:
    with Path(path).open(encoding="utf-8") as fh:
        return [SmsMessage.from_dict(json.loads(line)) for line in fh if line.strip()]


@dataclass(frozen=True)
class RequestContext:
    """What the server knows about an incoming request.

    ``peer`` is the address of the last network hop (socket peer). ``headers``
    may carry forwarding metadata, which is attacker-controlled and ignored.
    """

    peer: str | None
    headers: Mapping[str, str] = field(default_factory=dict)

    def relayed_via(self, hop: str) -> RequestContext:
        """The same request after being forwarded by a relay at *hop*."""
        headers = dict(self.headers)
        if self.peer is not None:
            prior = headers.get("X-Forwarded-For")
            headers["X-Forwarded-For"] = f"{prior}, {self.peer}" if prior else self.peer
        return RequestContext(peer=hop, headers=headers)


def observe_client_ip(ctx: RequestContext) -> IpAddress:
    """Return the canonical IP of the last hop, i.e. the AAIP the server will report."""
    if not ctx.peer:
        raise MissingSourceAddress("request has no source address")
    return IpAddress(ctx.peer)


__all__ = [
    "AAIP_NOTICE_TEMPLATE",
    "RequestContext",
    "SmsGateway",
    "SmsKind",
    "SmsMessage",
    "aaip_notice_body",
    "load_sms_log",
    "observe_client_ip",
    "otp_delivery_body",
    "parse_aaip_notice",
    "parse_otp_delivery",
    "read_inbox",
    "send_sms",
    "wrong_sc_alert_body",
]
