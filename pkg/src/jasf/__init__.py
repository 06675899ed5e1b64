"""IP-echo two-step, two-channel login protocol (OTP + secret code + AAIP notice)."""

from jasf.errors import (
    DuplicateUsername,
    InvalidIp,
    InvalidMobile,
    InvalidScenario,
    JasfError,
    MissingSourceAddress,
    SameMobileTwice,
    SessionExpired,
    StateError,
    UnknownAxis,
    UnknownUsername,
)
from jasf.types import IpAddress, MobileNumber

__version__ = "0.1.0"

__all__ = [
    "DuplicateUsername",
    "InvalidIp",
    "InvalidMobile",
    "InvalidScenario",
    "IpAddress",
    "JasfError",
    "MissingSourceAddress",
    "MobileNumber",
    "SameMobileTwice",
    "SessionExpired",
    "StateError",
    "UnknownAxis",
    "UnknownUsername",
]
