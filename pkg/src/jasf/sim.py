"""Deterministic attack scenarios against password-only, password+OTP and AAIP logins.

One honest user and one attacker interact with a real protocol engine over a
modelled web channel. The SMS channel cannot be read by the attacker: any OTP
it holds was typed by the user into a page the attacker controls.

Every run produces an ordered event trace; the :class:`ScenarioReport` fields
are computed from that trace alone (see :func:`summarize`).
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Iterable, Mapping, Sequence

from jasf.baselines import Esm2, Esm2State, esm1_login
from jasf.channels import SmsGateway, SmsKind, parse_aaip_notice, parse_otp_delivery
from jasf.errors import InvalidScenario, JasfError, SessionExpired, UnknownAxis
from jasf.protocol import (
    Account,
    AccountStore,
    AaipVerdict,
    AuthResult,
    ChannelChoice,
    JasmProtocol,
    Outcome,
    ProtocolConfig,
    State,
    compose_otpsc,
    verify_aaip,
)
from jasf.types import IpAddress

USER_IP = "198.51.100.9"
ATTACKER_IP = "203.0.113.7"
PROXY_IP = "192.0.2.1"

VICTIM = "alice"
VICTIM_PASSWORD = "correct horse battery"
VICTIM_SC = "pasta9"
VICTIM_PRIMARY = "+910000000001"
VICTIM_SECONDARY = "+910000000002"

START_TIME = 1_700_000_000.0
THINK_TIME = 20.0
# Digest cost inside simulations only; nothing here is persisted.
SIM_DIGEST_ITERATIONS = 1_000


class Protocol(str, Enum):
    ESM1 = "ESM1"
    ESM2 = "ESM2"
    JASM = "JASM"


@dataclass(frozen=True)
class AdversaryModel:
    intercepts_web: bool = False
    knows_sc: bool = False
    behind_same_proxy: bool = False
    sc_guess_budget: int = 10
    ip: str = ATTACKER_IP

    def closure(self) -> AdversaryModel:
        """Same model with implied capabilities switched on (same-proxy implies a relay)."""
        return replace(self, intercepts_web=self.intercepts_web or self.behind_same_proxy)


@dataclass(frozen=True)
class UserModel:
    ip: str = USER_IP
    proxy_ip: str | None = None
    checks_aaip: bool = True

    @property
    def comparison_ip(self) -> str:
        return self.proxy_ip or self.ip


@dataclass(frozen=True)
class Scenario:
    protocol: Protocol
    user: UserModel = field(default_factory=UserModel)
    adversary: AdversaryModel = field(default_factory=AdversaryModel)
    config: ProtocolConfig = field(default_factory=ProtocolConfig)
    seed: int = 0
    sc_guesses: tuple[str, ...] | None = None

    def validate(self) -> None:
        try:
            Protocol(self.protocol)
            IpAddress(self.user.ip)
            IpAddress(self.adversary.ip)
            if self.user.proxy_ip is not None:
                IpAddress(self.user.proxy_ip)
        except (ValueError, JasfError) as exc:
            raise InvalidScenario(str(exc)) from exc
        if self.adversary.behind_same_proxy and not self.adversary.intercepts_web:
            raise InvalidScenario("behind_same_proxy requires intercepts_web")
        if self.adversary.sc_guess_budget < 0:
            raise InvalidScenario("sc_guess_budget must be non-negative")

    def to_dict(self) -> dict[str, Any]:
        return {
            "protocol": Protocol(self.protocol).value,
            "user": {"ip": self.user.ip, "proxy_ip": self.user.proxy_ip, "checks_aaip": self.user.checks_aaip},
            "adversary": {
                "intercepts_web": self.adversary.intercepts_web,
                "knows_sc": self.adversary.knows_sc,
                "behind_same_proxy": self.adversary.behind_same_proxy,
                "sc_guess_budget": self.adversary.sc_guess_budget,
                "ip": self.adversary.ip,
            },
            "config": self.config.to_dict(),
            "seed": self.seed,
            "sc_guesses": list(self.sc_guesses) if self.sc_guesses is not None else None,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Scenario:
        try:
            guesses = data.get("sc_guesses")
            scenario = cls(
                protocol=Protocol(str(data["protocol"]).upper()),
                user=UserModel(**data.get("user", {})),
                adversary=AdversaryModel(**data.get("adversary", {})),
                config=ProtocolConfig.from_dict(data.get("config", {})),
                seed=int(data.get("seed", 0)),
                sc_guesses=tuple(str(g) for g in guesses) if guesses is not None else None,
            )
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise InvalidScenario(f"bad scenario: {exc}") from exc
        scenario.validate()
        return scenario


@dataclass(frozen=True)
class TraceEvent:
    step: int
    t: float
    actor: str
    action: str
    detail: Mapping[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"step": self.step, "t": self.t, "actor": self.actor, "action": self.action, **self.detail}


@dataclass(frozen=True)
class ScenarioReport:
    compromised: bool
    detected: bool
    secrets_captured: tuple[str, ...]
    trace: tuple[TraceEvent, ...]
    alert_at_guess: int | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "compromised": self.compromised,
            "detected": self.detected,
            "secrets_captured": list(self.secrets_captured),
            "alert_at_guess": self.alert_at_guess,
            "trace": [e.to_dict() for e in self.trace],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def summarize(trace: Sequence[TraceEvent]) -> ScenarioReport:
    secrets_captured = sorted({e.detail["secret"] for e in trace if e.action == "secret_captured"})
    attacker_session = any(
        e.action == "authenticated" and e.detail.get("holder") == "attacker" for e in trace
    )
    mismatch = any(e.action == "aaip_verdict" and e.detail["verdict"] == AaipVerdict.MISMATCH.value for e in trace)
    alerted = any(
        e.action == "sms_delivered" and e.detail["kind"] == SmsKind.WRONG_SC_ALERT.value for e in trace
    )
    alert_at = None
    last_guess = None
    for e in trace:
        if e.action == "submit_sc_guess":
            last_guess = e.detail["guess_no"]
        elif e.action == "sms_delivered" and e.detail["kind"] == SmsKind.WRONG_SC_ALERT.value:
            alert_at = last_guess
            break
    return ScenarioReport(
        compromised="password" in secrets_captured or attacker_session,
        detected=mismatch or alerted,
        secrets_captured=tuple(secrets_captured),
        trace=tuple(trace),
        alert_at_guess=alert_at,
    )


class _Run:
    """Mutable state of one scenario execution."""

    def __init__(self, scenario: Scenario) -> None:
        self.s = scenario
        self.rng = random.Random(scenario.seed)
        self.now = START_TIME
        self.trace: list[TraceEvent] = []
        self.gateway = SmsGateway()
        self._sms_seen = 0
        account = Account.create(
            VICTIM, VICTIM_PASSWORD, VICTIM_SC, VICTIM_PRIMARY, VICTIM_SECONDARY,
            iterations=SIM_DIGEST_ITERATIONS,
        )
        self.store = AccountStore([account])
        self.account = account
        self.jasm = JasmProtocol(self.store, self.gateway, scenario.config, self.rng)
        self.esm2 = Esm2(self.store, self.gateway, scenario.config, self.rng)
        self.captured: dict[str, str] = {}
        adv = scenario.adversary
        if adv.intercepts_web:
            self.server_sees = scenario.user.comparison_ip if adv.behind_same_proxy else adv.ip
        else:
            self.server_sees = scenario.user.comparison_ip
        self.holder = "attacker" if adv.intercepts_web else "user"

    def tick(self, dt: float = 1.0) -> None:
        self.now += dt

    def emit(self, actor: str, action: str, **detail: Any) -> None:
        self.trace.append(TraceEvent(len(self.trace), self.now, actor, action, detail))

    def flush_sms(self) -> None:
        for msg in self.gateway.messages_after(self._sms_seen):
            self.emit("sms", "sms_delivered", seq=msg.seq, to=msg.to.digits, kind=msg.kind.value, body=msg.body)
            self._sms_seen = msg.seq

    def capture(self, secret: str, value: str, via: str = "web") -> None:
        if secret not in self.captured:
            self.captured[secret] = value
            self.emit("attacker", "secret_captured", secret=secret, via=via)

    def user_types(self, action: str, fields: Mapping[str, str]) -> None:
        """User enters *fields* into the login page; a relaying attacker sees all of it."""
        self.tick()
        self.emit("user", action, fields=sorted(fields), via="attacker" if self.s.adversary.intercepts_web else "direct")
        if self.s.adversary.intercepts_web:
            self.emit("attacker", "relay", relayed=action, egress_ip=self.server_sees)
            for name in ("password", "otp", "sc"):
                if name in fields:
                    self.capture(name, fields[name])

    def latest_sms(self, kind: SmsKind) -> str | None:
        for msg in reversed(self.gateway.read_inbox(self.account.primary_mobile)):
            if msg.kind is kind:
                return msg.body
        return None

    def user_reads_otp(self) -> str | None:
        self.tick(THINK_TIME)
        body = self.latest_sms(SmsKind.OTP_DELIVERY)
        self.emit("user", "read_sms", kind=SmsKind.OTP_DELIVERY.value)
        return parse_otp_delivery(body) if body else None

    def user_checks_notice(self, session) -> bool:
        """Return False if the user aborted after an AAIP mismatch."""
        body = self.latest_sms(SmsKind.AAIP_NOTICE)
        self.tick()
        self.emit("user", "read_sms", kind=SmsKind.AAIP_NOTICE.value)
        if not self.s.user.checks_aaip:
            return True
        notice_ip = parse_aaip_notice(body)
        verdict = verify_aaip(notice_ip, self.s.user.comparison_ip)
        self.emit("user", "aaip_verdict", verdict=verdict.value, notice_ip=notice_ip.text,
                  local_ip=IpAddress(self.s.user.comparison_ip).text)
        if verdict is AaipVerdict.MISMATCH:
            if session.state is State.AWAIT_PASSWORD:
                self.jasm.abort_on_mismatch(session, self.now)
            self.emit("user", "client_abort")
            return False
        return True

    def prior_knowledge(self) -> None:
        if self.s.adversary.knows_sc:
            self.capture("sc", VICTIM_SC, via="prior_knowledge")


def _run_esm1(run: _Run) -> None:
    run.user_types("submit_credentials", {"username": VICTIM, "password": VICTIM_PASSWORD})
    result = esm1_login(run.store, VICTIM, VICTIM_PASSWORD)
    run.emit("server", "login_result", protocol="ESM1", result=result.value)
    if result is AuthResult.AUTHENTICATED:
        run.emit("server", "authenticated", holder=run.holder)
    if run.holder != "attacker" and "password" in run.captured:
        _attacker_replay_esm1(run)


def _attacker_replay_esm1(run: _Run) -> None:
    run.tick()
    run.emit("attacker", "replay_login", protocol="ESM1")
    if esm1_login(run.store, VICTIM, run.captured["password"]) is AuthResult.AUTHENTICATED:
        run.emit("server", "authenticated", holder="attacker")


def _run_esm2(run: _Run) -> None:
    run.user_types("submit_credentials", {"username": VICTIM, "password": VICTIM_PASSWORD})
    session = run.esm2.begin(VICTIM, VICTIM_PASSWORD, run.now)
    run.emit("server", "password_checked", protocol="ESM2", state=session.state.value)
    run.flush_sms()
    if session.state is not Esm2State.AWAIT_OTP:
        return
    otp = run.user_reads_otp()
    run.user_types("submit_otp", {"otp": otp})
    result = run.esm2.verify(session, otp, run.now)
    run.emit("server", "login_result", protocol="ESM2", result=result.value)
    if result is AuthResult.AUTHENTICATED:
        run.emit("server", "authenticated", holder=run.holder)


def _run_jasm(run: _Run) -> None:
    run.user_types("submit_username", {"username": VICTIM})
    session = run.jasm.begin_login(VICTIM, ChannelChoice.PRIMARY, run.server_sees, run.now)
    run.emit("server", "session_started", client_ip=session.client_ip.text)
    run.flush_sms()
    otp = run.user_reads_otp()
    if otp is not None:
        run.user_types("submit_otpsc", {"otp": otp, "sc": VICTIM_SC})
        try:
            outcome = run.jasm.submit_otpsc(session, compose_otpsc(otp, VICTIM_SC), run.server_sees, run.now)
        except SessionExpired:
            run.emit("server", "session_expired")
            _attacker_followup_jasm(run)
            return
        run.emit("server", "otpsc_outcome", outcome=outcome.kind.value, state=session.state.value)
        run.flush_sms()
        if outcome.kind is Outcome.ACCEPTED and run.user_checks_notice(session):
            run.user_types("submit_password", {"password": VICTIM_PASSWORD})
            try:
                result = run.jasm.submit_password(session, VICTIM_PASSWORD, run.now)
            except SessionExpired:
                run.emit("server", "session_expired")
            else:
                run.emit("server", "login_result", protocol="JASM", result=result.value)
                if result is AuthResult.AUTHENTICATED:
                    run.emit("server", "authenticated", holder=run.holder)
    _attacker_followup_jasm(run)


def _attacker_followup_jasm(run: _Run) -> None:
    """Attacker without a session tries its captured OTP + SC from its own IP."""
    if "otp" not in run.captured or "sc" not in run.captured:
        return
    if any(e.action == "authenticated" and e.detail.get("holder") == "attacker" for e in run.trace):
        return
    adv_ip = run.s.adversary.ip
    run.tick()
    run.emit("attacker", "begin_login", client_ip=adv_ip)
    session = run.jasm.begin_login(VICTIM, ChannelChoice.PRIMARY, adv_ip, run.now)
    run.flush_sms()
    run.tick()
    run.emit("attacker", "submit_otpsc", client_ip=adv_ip, replayed_otp=True)
    outcome = run.jasm.submit_otpsc(session, compose_otpsc(run.captured["otp"], run.captured["sc"]), adv_ip, run.now)
    run.emit("server", "otpsc_outcome", outcome=outcome.kind.value, state=session.state.value)
    run.flush_sms()


_RUNNERS = {Protocol.ESM1: _run_esm1, Protocol.ESM2: _run_esm2, Protocol.JASM: _run_jasm}


def run_scenario(s: Scenario) -> ScenarioReport:
    """Run the relay/phishing interaction for ``s.protocol`` and report."""
    s.validate()
    run = _Run(s)
    run.prior_knowledge()
    _RUNNERS[Protocol(s.protocol)](run)
    return summarize(run.trace)


def run_same_proxy_scenario(s: Scenario) -> ScenarioReport:
    if not s.adversary.behind_same_proxy:
        raise InvalidScenario("same-proxy scenario requires behind_same_proxy")
    if s.user.proxy_ip is None:
        raise InvalidScenario("same-proxy scenario requires user.proxy_ip")
    return run_scenario(s)


def run_sc_bruteforce(s: Scenario, guesses: Iterable[str]) -> ScenarioReport:
    """Attacker holds the user's OTP (typed into a phishing page) and guesses the SC.

    Guesses are submitted on the relayed session until it leaves OTP_PENDING
    or ``sc_guess_budget`` is spent.
    """
    s.validate()
    if Protocol(s.protocol) is not Protocol.JASM:
        raise InvalidScenario("SC brute force applies to JASM only")
    if not s.adversary.intercepts_web:
        raise InvalidScenario("SC brute force needs a phished OTP (intercepts_web)")
    if s.adversary.knows_sc:
        raise InvalidScenario("SC brute force assumes the attacker does not know the SC")
    run = _Run(s)
    run.user_types("submit_username", {"username": VICTIM})
    session = run.jasm.begin_login(VICTIM, ChannelChoice.PRIMARY, run.server_sees, run.now)
    run.emit("server", "session_started", client_ip=session.client_ip.text)
    run.flush_sms()
    otp = run.user_reads_otp()
    # The phishing page asks for the OTP alone, so the SC never crosses the web.
    run.user_types("submit_otp_to_phishing_page", {"otp": otp})
    for guess_no, guess in enumerate(list(guesses)[: s.adversary.sc_guess_budget], start=1):
        if session.state is not State.OTP_PENDING:
            break
        run.tick()
        run.emit("attacker", "submit_sc_guess", guess_no=guess_no, client_ip=run.server_sees)
        try:
            outcome = run.jasm.submit_otpsc(session, compose_otpsc(run.captured["otp"], guess), run.server_sees, run.now)
        except SessionExpired:
            run.emit("server", "session_expired")
            break
        run.emit("server", "otpsc_outcome", outcome=outcome.kind.value, state=session.state.value,
                 alert_sent=outcome.alert_sent)
        run.flush_sms()
        if outcome.kind is Outcome.ACCEPTED:
            run.capture("sc", guess, via="guess")
            run.user_checks_notice(session)
            break
    return summarize(run.trace)


def simulate(s: Scenario) -> ScenarioReport:
    if s.sc_guesses is not None:
        return run_sc_bruteforce(s, s.sc_guesses)
    return run_scenario(s)


SWEEP_AXES = ("wrong_sc_threshold", "otp_ttl", "intercepts_web", "behind_same_proxy", "checks_aaip")


def with_axis(base: Scenario, axis: str, value: Any) -> Scenario:
    if axis in ("wrong_sc_threshold", "otp_ttl"):
        return replace(base, config=replace(base.config, **{axis: type(getattr(base.config, axis))(value)}))
    if axis in ("intercepts_web", "behind_same_proxy"):
        return replace(base, adversary=replace(base.adversary, **{axis: bool(value)}))
    if axis == "checks_aaip":
        return replace(base, user=replace(base.user, checks_aaip=bool(value)))
    raise UnknownAxis(f"unknown sweep axis {axis!r}; expected one of {', '.join(SWEEP_AXES)}")


def sweep(base: Scenario, axis: str, values: Sequence[Any]) -> list[dict[str, Any]]:
    if axis not in SWEEP_AXES:
        raise UnknownAxis(f"unknown sweep axis {axis!r}; expected one of {', '.join(SWEEP_AXES)}")
    rows = []
    for value in values:
        report = simulate(with_axis(base, axis, value))
        rows.append({
            axis: value,
            "compromised": report.compromised,
            "detected": report.detected,
            "secrets_captured": list(report.secrets_captured),
            "alert_at_guess": report.alert_at_guess,
        })
    return rows


def format_table(rows: Sequence[Mapping[str, Any]]) -> str:
    if not rows:
        return ""
    headers = list(rows[0])
    cells = [[json.dumps(r[h]) if not isinstance(r[h], str) else r[h] for h in headers] for r in rows]
    widths = [max(len(h), *(len(c[i]) for c in cells)) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in cells)
    return "\n".join(lines)


WRONG_GUESSES = tuple(f"guess{i}" for i in range(10))

PRESETS: dict[str, Scenario] = {
    "esm1-phish": Scenario(Protocol.ESM1, adversary=AdversaryModel(intercepts_web=True), seed=7),
    "esm2-mitm": Scenario(Protocol.ESM2, adversary=AdversaryModel(intercepts_web=True), seed=7),
    "jasm-mitm": Scenario(Protocol.JASM, adversary=AdversaryModel(intercepts_web=True), seed=7),
    "jasm-same-proxy": Scenario(
        Protocol.JASM,
        user=UserModel(proxy_ip=PROXY_IP),
        adversary=AdversaryModel(intercepts_web=True, behind_same_proxy=True),
        seed=7,
    ),
    "jasm-sc-bruteforce": Scenario(
        Protocol.JASM,
        adversary=AdversaryModel(intercepts_web=True),
        seed=7,
        sc_guesses=WRONG_GUESSES,
    ),
}


def preset(name: str) -> Scenario:
    try:
        return PRESETS[name]
    except KeyError:
        raise InvalidScenario(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}") from None


__all__ = [
    "AdversaryModel", "PRESETS", "Protocol", "Scenario", "ScenarioReport", "TraceEvent", "UserModel",
    "format_table", "preset", "run_same_proxy_scenario", "run_sc_bruteforce", "run_scenario",
    "simulate", "summarize", "sweep",
]
