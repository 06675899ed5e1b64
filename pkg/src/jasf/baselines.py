"""Reference logins without the AAIP echo: password only, and password-then-OTP.

Both exist so the simulator can compare them against the AAIP protocol. The
OTP lifecycle (issue/reuse/consume) is the one in :class:`AccountStore`.
"""

from __future__ import annotations

import hmac
import secrets
from dataclasses import dataclass
from enum import Enum
from typing import Any

from jasf.channels import SmsGateway, SmsKind, otp_delivery_body
from jasf.digest import check_digest
from jasf.errors import StateError
from jasf.protocol import AccountStore, AuthResult, ProtocolConfig, new_token


def esm1_login(store: AccountStore, username: str, password: str) -> AuthResult:
    """Username + password. No channel events, no state."""
    account = store.get(username)
    if account is not None and check_digest(password, account.password_secret):
        return AuthResult.AUTHENTICATED
    return AuthResult.REJECTED


class Esm2State(str, Enum):
    AWAIT_PASSWORD = "await_password"
    AWAIT_OTP = "await_otp"
    AUTHENTICATED = "authenticated"
    TERMINATED = "terminated"


@dataclass
class Esm2Session:
    id: str
    username: str
    state: Esm2State
    created_at: float
    wrong_otp_attempts: int = 0


class Esm2:
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

    def begin(self, username: str, password: str, now: float) -> Esm2Session:
        session = Esm2Session(new_token(self.rng), username, Esm2State.AWAIT_PASSWORD, float(now))
        account = self.store.get(username)
        if account is None or not check_digest(password, account.password_secret):
            session.state = Esm2State.TERMINATED
            return session
        with self.store.lock(username):
            otp, _ = self.store.issue_otp(username, self.rng, self.config, now)
            self.gateway.send(account.primary_mobile, SmsKind.OTP_DELIVERY, otp_delivery_body(otp.value), now)
        session.state = Esm2State.AWAIT_OTP
        return session

    def verify(self, session: Esm2Session, otp_value: str, now: float) -> AuthResult:
        # Note: nothing here looks at where the OTP came from.
        if session.state is not Esm2State.AWAIT_OTP:
            raise StateError(f"verify not allowed in state {session.state.value}")
        with self.store.lock(session.username):
            otp = self.store.active_otp(session.username, now)
            if otp is not None and hmac.compare_digest(otp_value.encode(), otp.value.encode()):
                self.store.consume_otp(session.username, otp)
                session.state = Esm2State.AUTHENTICATED
                return AuthResult.AUTHENTICATED
        session.wrong_otp_attempts += 1
        if session.wrong_otp_attempts >= self.config.max_wrong_otp:
            session.state = Esm2State.TERMINATED
        return AuthResult.REJECTED


def esm2_begin(store: AccountStore, gateway: SmsGateway, username: str, password: str, now: float,
               config: ProtocolConfig | None = None, rng: Any = None) -> Esm2Session:
    return Esm2(store, gateway, config, rng).begin(username, password, now)


def esm2_verify(store: AccountStore, gateway: SmsGateway, session: Esm2Session, otp: str, now: float,
                config: ProtocolConfig | None = None) -> AuthResult:
    return Esm2(store, gateway, config).verify(session, otp, now)
