"""Server side of the OTP + secret-code login with an AAIP (account access IP) echo.

Flow for one login session::

    begin_login  -> OTP delivered by SMS, session OTP_PENDING
    submit_otpsc -> WRONG_OTP (re-prompt) | WRONG_SC (counted, may alert)
                    | ACCEPTED (AAIP notice sent, session AWAIT_PASSWORD)
    submit_password -> AUTHENTICATED

A password is only ever accepted after the AAIP notice for the same session
has been dispatched. Time is always passed in by the caller.
"""

from __future__ import annotations

import hmac
import secrets
import threading
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Iterator, Mapping

from jasf.channels import (
    SmsGateway,
    SmsKind,
    SmsMessage,
    aaip_notice_body,
    otp_delivery_body,
    wrong_sc_alert_body,
)
from jasf.digest import DEFAULT_ITERATIONS, check_digest, make_digest
from jasf.errors import DuplicateUsername, SameMobileTwice, SessionExpired, StateError
from jasf.types import IpAddress, MobileNumber


@dataclass(frozen=True)
class ProtocolConfig:
    otp_length: int = 6
    otp_ttl: float = 2 * 60 * 60.0
    wrong_sc_threshold: int = 3
    max_wrong_otp: int = 5
    spl_passcode_length: int = 8
    spl_passcode_count: int = 10
    max_password_attempts: int = 3

    def __post_init__(self) -> None:
        for name, value in asdict(self).items():
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value!r}")
        if self.otp_length < 4:
            raise ValueError("otp_length must be at least 4")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ProtocolConfig:
        known = cls.__dataclass_fields__
        unknown = set(data) - set(known)
        if unknown:
            raise ValueError(f"unknown protocol config keys: {sorted(unknown)}")
        kwargs = {k: (float(v) if k == "otp_ttl" else int(v)) for k, v in data.items()}
        return cls(**kwargs)


class ChannelChoice(str, Enum):
    PRIMARY = "primary"
    SECONDARY = "secondary"
    SPL_PASSCODE = "spl"


class State(str, Enum):
    OTP_PENDING = "otp_pending"
    AWAIT_PASSWORD = "await_password"
    AUTHENTICATED = "authenticated"
    TERMINATED = "terminated"


class TerminationReason(str, Enum):
    WRONG_OTP_LIMIT = "wrong_otp_limit"
    SC_ALERT = "sc_alert"
    PASSWORD_FAIL = "password_fail"
    EXPIRED = "expired"
    CLIENT_ABORT = "client_abort"


class Outcome(str, Enum):
    WRONG_OTP = "wrong_otp"
    WRONG_SC = "wrong_sc"
    ACCEPTED = "accepted"


class AuthResult(str, Enum):
    AUTHENTICATED = "authenticated"
    REJECTED = "rejected"


class AaipVerdict(str, Enum):
    MATCH = "match"
    MISMATCH = "mismatch"


LEGAL_TRANSITIONS: dict[State, frozenset[State]] = {
    State.OTP_PENDING: frozenset({State.OTP_PENDING, State.AWAIT_PASSWORD, State.TERMINATED}),
    State.AWAIT_PASSWORD: frozenset({State.AWAIT_PASSWORD, State.AUTHENTICATED, State.TERMINATED}),
    State.AUTHENTICATED: frozenset(),
    State.TERMINATED: frozenset(),
}

# State each session operation requires.
OPERATION_REQUIRES: dict[str, State] = {
    "submit_otpsc": State.OTP_PENDING,
    "submit_spl_otpsc": State.OTP_PENDING,
    "submit_password": State.AWAIT_PASSWORD,
    "abort_on_mismatch": State.AWAIT_PASSWORD,
}


@dataclass
class Otp:
    value: str
    issued_at: float
    ttl: float
    consumed: bool = False
    account: str = ""

    def is_active(self, now: float) -> bool:
        return not self.consumed and now < self.issued_at + self.ttl


def mint_otp(rng: Any, length: int, now: float, ttl: float, account: str = "") -> Otp:
    """Draw a uniform *length*-digit OTP from *rng* (leading zeros kept)."""
    if length < 4:
        raise ValueError("OTP length must be at least 4")
    value = f"{rng.randrange(10**length):0{length}d}"
    return Otp(value=value, issued_at=float(now), ttl=float(ttl), account=account)


def compose_otpsc(otp_value: str, sc: str) -> str:
    return otp_value + sc


def split_otpsc(otpsc: str, length: int) -> tuple[str, str]:
    """Split at the fixed OTP length; short input yields ``(otpsc, "")``."""
    if length < 0:
        raise ValueError("length must be non-negative")
    return otpsc[:length], otpsc[length:]


def verify_aaip(notice_ip: IpAddress | str, local_ip: IpAddress | str) -> AaipVerdict:
    """Client-side check: did the server see the OTPSC come from my (or my proxy's) IP?"""
    if IpAddress(str(notice_ip)) == IpAddress(str(local_ip)):
        return AaipVerdict.MATCH
    return AaipVerdict.MISMATCH


def new_token(rng: Any) -> str:
    """32 random bytes as 64 hex chars."""
    return f"{rng.getrandbits(256):064x}"


@dataclass
class Account:
    username: str
    password_secret: str
    sc_secret: str
    primary_mobile: MobileNumber
    secondary_mobile: MobileNumber
    spl_passcodes: list[str] = field(default_factory=list)
    wrong_sc_count: int = 0
    alerted: bool = False

    def __post_init__(self) -> None:
        if self.primary_mobile == self.secondary_mobile:
            raise SameMobileTwice("primary and secondary mobile numbers must differ")
        if self.wrong_sc_count < 0:
            raise ValueError("wrong_sc_count must be non-negative")

    @classmethod
    def create(
        cls,
        username: str,
        password: str,
        sc: str,
        primary: MobileNumber | str,
        secondary: MobileNumber | str,
        iterations: int = DEFAULT_ITERATIONS,
    ) -> Account:
        return cls(
            username=username,
            password_secret=make_digest(password, iterations),
            sc_secret=make_digest(sc, iterations),
            primary_mobile=MobileNumber(str(primary)),
            secondary_mobile=MobileNumber(str(secondary)),
        )

    def set_sc(self, sc: str, iterations: int = DEFAULT_ITERATIONS) -> None:
        self.sc_secret = make_digest(sc, iterations)

    def set_mobiles(self, primary: MobileNumber | str, secondary: MobileNumber | str) -> None:
        primary, secondary = MobileNumber(str(primary)), MobileNumber(str(secondary))
        if primary == secondary:
            raise SameMobileTwice("primary and secondary mobile numbers must differ")
        self.primary_mobile, self.secondary_mobile = primary, secondary

    def mint_spl_passcodes(
        self,
        rng: Any,
        count: int = 10,
        length: int = 8,
        iterations: int = DEFAULT_ITERATIONS,
    ) -> list[str]:
        """Replace the spl-passcode batch; the plaintext codes are returned once and never stored."""
        codes = [f"{rng.randrange(10**length):0{length}d}" for _ in range(count)]
        self.spl_passcodes = [make_digest(c, iterations) for c in codes]
        return codes

    def to_dict(self) -> dict[str, Any]:
        return {
            "username": self.username,
            "password_secret": self.password_secret,
            "sc_secret": self.sc_secret,
            "primary_mobile": self.primary_mobile.digits,
            "secondary_mobile": self.secondary_mobile.digits,
            "spl_passcodes": list(self.spl_passcodes),
            "wrong_sc_count": self.wrong_sc_count,
            "alerted": self.alerted,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Account:
        return cls(
            username=data["username"],
            password_secret=data["password_secret"],
            sc_secret=data["sc_secret"],
            primary_mobile=MobileNumber(data["primary_mobile"]),
            secondary_mobile=MobileNumber(data["secondary_mobile"]),
            spl_passcodes=list(data.get("spl_passcodes", [])),
            wrong_sc_count=int(data.get("wrong_sc_count", 0)),
            alerted=bool(data.get("alerted", False)),
        )


class AccountStore:
    """In-memory accounts plus their (at most one) active OTP.

    ``lock(username)`` gives per-account atomic read-modify-write; distinct
    accounts never contend. ``commit`` is a persistence hook for subclasses.
    """

    def __init__(self, accounts: Iterator[Account] | list[Account] = ()) -> None:
        self._accounts: dict[str, Account] = {}
        self._otps: dict[str, Otp] = {}
        self._locks: dict[str, threading.RLock] = {}
        self._guard = threading.Lock()
        for account in accounts:
            self.add(account)

    def add(self, account: Account) -> None:
        with self._guard:
            if account.username in self._accounts:
                raise DuplicateUsername(account.username)
            self._accounts[account.username] = account

    def get(self, username: str) -> Account | None:
        return self._accounts.get(username)

    def __contains__(self, username: object) -> bool:
        return username in self._accounts

    def __iter__(self) -> Iterator[Account]:
        return iter(list(self._accounts.values()))

    def __len__(self) -> int:
        return len(self._accounts)

    def lock(self, username: str) -> threading.RLock:
        with self._guard:
            return self._locks.setdefault(username, threading.RLock())

    def commit(self, username: str) -> None:
        """Called after an account record was mutated."""

    def active_otp(self, username: str, now: float) -> Otp | None:
        with self.lock(username):
            otp = self._otps.get(username)
            return otp if otp is not None and otp.is_active(now) else None

    def issue_otp(self, username: str, rng: Any, config: ProtocolConfig, now: float) -> tuple[Otp, bool]:
        """Return the active OTP, minting one only if none is active.

        The boolean is True when a fresh OTP was minted. Reuse is what keeps a
        stranger typing someone else's username from flooding their phone.
        """
        with self.lock(username):
            current = self.active_otp(username, now)
            if current is not None:
                return current, False
            otp = mint_otp(rng, config.otp_length, now, config.otp_ttl, account=username)
            self._otps[username] = otp
            return otp, True

    def consume_otp(self, username: str, otp: Otp) -> None:
        with self.lock(username):
            otp.consumed = True


@dataclass(frozen=True)
class SessionEvent:
    kind: str
    at: float
    detail: Mapping[str, Any] = field(default_factory=dict)


@dataclass
class LoginSession:
    id: str
    username: str
    channel: ChannelChoice
    client_ip: IpAddress
    created_at: float
    state: State = State.OTP_PENDING
    reason: TerminationReason | None = None
    wrong_otp_attempts: int = 0
    wrong_password_attempts: int = 0
    decoy: bool = False
    trace: list[SessionEvent] = field(default_factory=list)

    def record(self, kind: str, at: float, **detail: Any) -> None:
        self.trace.append(SessionEvent(kind, float(at), detail))

    @property
    def aaip_notice_seq(self) -> int | None:
        for event in self.trace:
            if event.kind == "aaip_notice":
                return event.detail["seq"]
        return None


def handshake_ordered(session: LoginSession) -> bool:
    """True iff every password submission in the trace follows an AAIP notice."""
    notice_seen = False
    for event in session.trace:
        if event.kind == "aaip_notice":
            notice_seen = True
        elif event.kind in ("password_submitted", "authenticated") and not notice_seen:
            return False
    return True


@dataclass(frozen=True)
class VerifyOutcome:
    kind: Outcome
    alert_sent: bool = False
    notice: SmsMessage | None = None
    alerts: tuple[SmsMessage, ...] = ()


def _as_ip(value: IpAddress | str) -> IpAddress:
    return value if isinstance(value, IpAddress) else IpAddress(value)


class JasmProtocol:
    """Server-side protocol engine bound to an account store and SMS gateway."""

    def __init__(
        self,
        store: AccountStore,
        gateway: SmsGateway,
        config: ProtocolConfig | None = None,
        rng: Any = None,
    ) -> None:
        self.store = store
        self.gateway = gateway
        self.config = config or ProtocolConfig()
        self.rng = rng if rng is not None else secrets.SystemRandom()

    def begin_login(
        self,
        username: str,
        channel: ChannelChoice | str,
        client_ip: IpAddress | str,
        now: float,
    ) -> LoginSession:
        channel = ChannelChoice(channel)
        ip = _as_ip(client_ip)
        account = self.store.get(username)
        session = LoginSession(
            id=new_token(self.rng),
            username=username,
            channel=channel,
            client_ip=ip,
            created_at=float(now),
            decoy=account is None,
        )
        session.record("created", now, ip=ip.text, channel=channel.value)
        if account is None or channel is ChannelChoice.SPL_PASSCODE:
            return session
        with self.store.lock(username):
            otp, fresh = self.store.issue_otp(username, self.rng, self.config, now)
            to = account.primary_mobile if channel is ChannelChoice.PRIMARY else account.secondary_mobile
            msg = self.gateway.send(to, SmsKind.OTP_DELIVERY, otp_delivery_body(otp.value), now)
        session.record("otp_delivered", now, seq=msg.seq, to=to.digits, fresh=fresh)
        return session

    def submit_otpsc(
        self,
        session: LoginSession,
        otpsc: str,
        client_ip: IpAddress | str,
        now: float,
    ) -> VerifyOutcome:
        self._require(session, "submit_otpsc", now)
        if session.channel is ChannelChoice.SPL_PASSCODE:
            raise StateError("session was opened for spl-passcode entry")
        ip = _as_ip(client_ip)
        session.client_ip = ip
        session.record("otpsc_submitted", now, ip=ip.text)
        if session.decoy:
            return self._wrong_otp(session, now)
        username = session.username
        with self.store.lock(username):
            account = self.store.get(username)
            otp = self.store.active_otp(username, now)
            otp_part, sc_part = split_otpsc(otpsc, self.config.otp_length)
            if otp is None or not hmac.compare_digest(otp_part.encode(), otp.value.encode()):
                return self._wrong_otp(session, now)
            if not check_digest(sc_part, account.sc_secret):
                return self._wrong_sc(session, account, now)
            self.store.consume_otp(username, otp)
            to = account.secondary_mobile if session.channel is ChannelChoice.SECONDARY else account.primary_mobile
            return self._accept(session, account, to, now)

    def submit_spl_otpsc(
        self,
        session: LoginSession,
        passcode: str,
        sc: str,
        client_ip: IpAddress | str,
        now: float,
    ) -> VerifyOutcome:
        self._require(session, "submit_spl_otpsc", now)
        if session.channel is not ChannelChoice.SPL_PASSCODE:
            raise StateError("session was not opened for spl-passcode entry")
        ip = _as_ip(client_ip)
        session.client_ip = ip
        session.record("otpsc_submitted", now, ip=ip.text, spl=True)
        if session.decoy:
            return self._wrong_otp(session, now)
        username = session.username
        with self.store.lock(username):
            account = self.store.get(username)
            match = next((d for d in account.spl_passcodes if check_digest(passcode, d)), None)
            if match is None:
                return self._wrong_otp(session, now)
            if not check_digest(sc, account.sc_secret):
                return self._wrong_sc(session, account, now)
            account.spl_passcodes.remove(match)
            return self._accept(session, account, account.primary_mobile, now)

    def submit_password(self, session: LoginSession, password: str, now: float) -> AuthResult:
        self._require(session, "submit_password", now)
        session.record("password_submitted", now)
        account = self.store.get(session.username)
        if account is not None and check_digest(password, account.password_secret):
            self._move(session, State.AUTHENTICATED)
            session.record("authenticated", now)
            return AuthResult.AUTHENTICATED
        session.wrong_password_attempts += 1
        session.record("password_rejected", now, attempts=session.wrong_password_attempts)
        if session.wrong_password_attempts >= self.config.max_password_attempts:
            self._terminate(session, TerminationReason.PASSWORD_FAIL, now)
        return AuthResult.REJECTED

    def abort_on_mismatch(self, session: LoginSession, now: float = 0.0) -> LoginSession:
        """The user saw a foreign AAIP and declines to send the password."""
        if session.state is not OPERATION_REQUIRES["abort_on_mismatch"]:
            raise StateError(f"abort_on_mismatch not allowed in state {session.state.value}")
        self._terminate(session, TerminationReason.CLIENT_ABORT, now)
        return session

    def _require(self, session: LoginSession, operation: str, now: float) -> None:
        required = OPERATION_REQUIRES[operation]
        if session.state is not required:
            raise StateError(f"{operation} not allowed in state {session.state.value}")
        if now - session.created_at > self.config.otp_ttl:
            self._terminate(session, TerminationReason.EXPIRED, now)
            raise SessionExpired(session.id)

    def _move(self, session: LoginSession, target: State) -> None:
        if target not in LEGAL_TRANSITIONS[session.state]:
            raise StateError(f"illegal transition {session.state.value} -> {target.value}")
        session.state = target

    def _terminate(self, session: LoginSession, reason: TerminationReason, now: float) -> None:
        self._move(session, State.TERMINATED)
        session.reason = reason
        session.record("terminated", now, reason=reason.value)

    def _wrong_otp(self, session: LoginSession, now: float) -> VerifyOutcome:
        session.wrong_otp_attempts += 1
        session.record("wrong_otp", now, attempts=session.wrong_otp_attempts)
        if session.wrong_otp_attempts >= self.config.max_wrong_otp:
            self._terminate(session, TerminationReason.WRONG_OTP_LIMIT, now)
        return VerifyOutcome(Outcome.WRONG_OTP)

    def _wrong_sc(self, session: LoginSession, account: Account, now: float) -> VerifyOutcome:
        threshold = self.config.wrong_sc_threshold
        account.wrong_sc_count += 1
        session.record("wrong_sc", now, count=account.wrong_sc_count)
        alerts: tuple[SmsMessage, ...] = ()
        # alert only on the crossing, once per registered number
        if account.wrong_sc_count == threshold + 1:
            account.alerted = True
            body = wrong_sc_alert_body(session.client_ip)
            alerts = tuple(
                self.gateway.send(number, SmsKind.WRONG_SC_ALERT, body, now)
                for number in (account.primary_mobile, account.secondary_mobile)
            )
            session.record("wrong_sc_alert", now, seqs=[m.seq for m in alerts], ip=session.client_ip.text)
        if account.wrong_sc_count > threshold:
            self._terminate(session, TerminationReason.SC_ALERT, now)
        self.store.commit(account.username)
        return VerifyOutcome(Outcome.WRONG_SC, alert_sent=bool(alerts), alerts=alerts)

    def _accept(self, session: LoginSession, account: Account, to: MobileNumber, now: float) -> VerifyOutcome:
        account.wrong_sc_count = 0
        notice = self.gateway.send(to, SmsKind.AAIP_NOTICE, aaip_notice_body(session.client_ip), now)
        self._move(session, State.AWAIT_PASSWORD)
        session.record("aaip_notice", now, seq=notice.seq, ip=session.client_ip.text, to=to.digits)
        self.store.commit(account.username)
        return VerifyOutcome(Outcome.ACCEPTED, notice=notice)
