"""Canonical value types: client IP addresses and mobile numbers."""

from __future__ import annotations

import ipaddress
import re
from dataclasses import dataclass

from jasf.errors import InvalidIp, InvalidMobile

_MOBILE_RE = re.compile(r"^\+?[0-9]+$")


@dataclass(frozen=True, slots=True)
class IpAddress:
    """An IPv4/IPv6 address, canonicalized on construction.

    IPv6 uses the RFC 5952 text form, so ``IpAddress("2001:DB8::1")`` and
    ``IpAddress("2001:db8:0:0:0:0:0:1")`` compare equal.
    """

    text: str

    def __post_init__(self) -> None:
        raw = self.text.strip() if isinstance(self.text, str) else self.text
        try:
            canonical = str(ipaddress.ip_address(raw))
        except (ValueError, TypeError) as exc:
            raise InvalidIp(f"not an IP address: {self.text!r}") from exc
        object.__setattr__(self, "text", canonical)

    def __str__(self) -> str:
        return self.text


@dataclass(frozen=True, slots=True)
class MobileNumber:
    digits: str

    def __post_init__(self) -> None:
        if not isinstance(self.digits, str) or not _MOBILE_RE.match(self.digits):
            raise InvalidMobile(f"not a mobile number: {self.digits!r}")

    def __str__(self) -> str:
        return self.digits
