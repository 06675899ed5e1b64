"""``jasf`` command line: serve, account, login, simulate, sweep.

Exit codes: 0 ok, 1 environment (network, bind, config), 2 usage/input,
3 MITM suspected (AAIP mismatch), 4 authentication rejected/terminated.
"""

from __future__ import annotations

import argparse
import getpass
import json
import os
import secrets
import signal
import sys
from pathlib import Path
from typing import Sequence

from jasf.channels import parse_aaip_notice
from jasf.client import JasfClient
from jasf.digest import DEFAULT_ITERATIONS
from jasf.errors import InvalidScenario, JasfError, UnknownAxis
from jasf.protocol import AaipVerdict, ProtocolConfig, verify_aaip
from jasf.service import ConfigError, ServiceConfig, build_service, make_server
from jasf.sim import PRESETS, SWEEP_AXES, Scenario, format_table, preset, simulate, sweep
from jasf.store import FileAccountStore, create_account, mint_spl, set_mobiles, set_sc
from jasf.types import IpAddress

EXIT_OK = 0
EXIT_ENV = 1
EXIT_USAGE = 2
EXIT_MITM = 3
EXIT_REJECTED = 4


def _ask(prompt: str, secret: bool = False) -> str:
    return getpass.getpass(prompt) if secret else input(prompt)


def _err(message: str) -> None:
    print(f"jasf: {message}", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jasf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the login service")
    p.add_argument("--config", default=os.environ.get("JASF_CONFIG"), help="config JSON (default: $JASF_CONFIG)")
    p.add_argument("--test-mode", action="store_true", help="enable the test inbox endpoint")

    p = sub.add_parser("account", help="administer the account store")
    p.add_argument("--config", default=os.environ.get("JASF_CONFIG"))
    p.add_argument("--store", help="account store path (overrides the config's)")
    acct = p.add_subparsers(dest="action", required=True)
    a = acct.add_parser("create")
    a.add_argument("--username", required=True)
    a.add_argument("--primary", required=True)
    a.add_argument("--secondary", required=True)
    a.add_argument("--password")
    a.add_argument("--sc")
    a = acct.add_parser("set-sc")
    a.add_argument("--username", required=True)
    a.add_argument("--sc")
    a = acct.add_parser("set-mobiles")
    a.add_argument("--username", required=True)
    a.add_argument("--primary", required=True)
    a.add_argument("--secondary", required=True)
    a = acct.add_parser("mint-spl")
    a.add_argument("--username", required=True)

    p = sub.add_parser("login", help="interactive login with client-side AAIP check")
    p.add_argument("--server", required=True, help="http://host:port")
    p.add_argument("--username", required=True)
    p.add_argument("--channel", choices=["primary", "secondary", "spl"], default="primary")
    p.add_argument("--my-ip", required=True, help="your public IP, or your proxy's egress IP")
    p.add_argument("--inbox", help="fetch the AAIP notice for this number from a test-mode server")

    for name in ("simulate", "sweep"):
        p = sub.add_parser(name, help=f"{name} attack scenarios")
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--scenario", type=Path, help="scenario JSON file")
        src.add_argument("--preset", choices=sorted(PRESETS))
        if name == "sweep":
            p.add_argument("--axis", required=True, choices=SWEEP_AXES)
            p.add_argument("--values", required=True, nargs="*", help="JSON scalars, e.g. 1 3 5 or false true")
            p.add_argument("--table", action="store_true", help="print a text table instead of JSON")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handler = {
        "serve": cmd_serve,
        "account": cmd_account,
        "login": cmd_login,
        "simulate": cmd_simulate,
        "sweep": cmd_sweep,
    }[args.command]
    return handler(args)


def cmd_serve(args: argparse.Namespace) -> int:
    if not args.config:
        _err("no config given (use --config or JASF_CONFIG)")
        return EXIT_ENV
    try:
        config = ServiceConfig.load(args.config)
        service = build_service(config)
        if args.test_mode:
            service.test_mode = True
        server = make_server(service, config.host, config.port)
    except (ConfigError, OSError, ValueError) as exc:
        _err(str(exc))
        return EXIT_ENV

    def _stop(signum, frame):
        raise KeyboardInterrupt

    signal.signal(signal.SIGTERM, _stop)
    host, port = server.server_address[:2]
    mode = "on" if service.test_mode else "off"
    print(f"jasf: listening on http://{host}:{port} (test mode {mode})", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def cmd_account(args: argparse.Namespace) -> int:
    iterations = DEFAULT_ITERATIONS
    protocol = ProtocolConfig()
    store_path = args.store
    if args.config:
        try:
            config = ServiceConfig.load(args.config)
        except ConfigError as exc:
            _err(str(exc))
            return EXIT_ENV
        iterations, protocol = config.digest_iterations, config.protocol
        store_path = store_path or config.account_store
    if not store_path:
        _err("no account store given (use --store or --config)")
        return EXIT_USAGE
    try:
        store = FileAccountStore.open(store_path)
        if args.action == "create":
            password = args.password or _ask("Password: ", secret=True)
            sc = args.sc or _ask("Secret code: ", secret=True)
            create_account(store, args.username, password, sc, args.primary, args.secondary, iterations)
            print(f"created account {args.username}")
        elif args.action == "set-sc":
            set_sc(store, args.username, args.sc or _ask("New secret code: ", secret=True), iterations)
            print(f"updated secret code for {args.username}")
        elif args.action == "set-mobiles":
            set_mobiles(store, args.username, args.primary, args.secondary)
            print(f"updated mobiles for {args.username}")
        else:
            codes = mint_spl(store, args.username, secrets.SystemRandom(), protocol, iterations)
            print(f"spl-passcodes for {args.username} (shown once):")
            for code in codes:
                print(code)
    except OSError as exc:
        _err(str(exc))
        return EXIT_ENV
    except (JasfError, ValueError) as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_USAGE
    return EXIT_OK


def _notice_ip(client: JasfClient, inbox: str | None) -> IpAddress | None:
    if inbox:
        status, messages = client.inbox(inbox)
        if status != 200:
            _err(f"cannot read test inbox ({status})")
            return None
        notices = [m for m in messages if m["kind"] == "aaip_notice"]
        if not notices:
            _err("no AAIP notice in inbox")
            return None
        return parse_aaip_notice(notices[-1]["body"])
    text = _ask("Paste the AAIP SMS (or just the IP it names): ").strip()
    ip = parse_aaip_notice(text)
    if ip is None:
        try:
            ip = IpAddress(text)
        except JasfError:
            _err("could not find an IP address in that text")
    return ip


def cmd_login(args: argparse.Namespace) -> int:
    try:
        my_ip = IpAddress(args.my_ip)
        client = JasfClient(args.server)
    except (JasfError, ValueError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    try:
        return _login_flow(client, args, my_ip)
    except OSError as exc:
        _err(f"network failure: {exc}")
        return EXIT_ENV


def _login_flow(client: JasfClient, args: argparse.Namespace, my_ip: IpAddress) -> int:
    status, data = client.start(args.username, args.channel)
    if status != 200:
        _err(f"login start failed ({status}): {data}")
        return EXIT_REJECTED
    session_id = data["session_id"]

    while True:
        if args.channel == "spl":
            passcode = _ask("spl-passcode: ")
            sc = _ask("Secret code: ", secret=True)
            status, data = client.spl(session_id, passcode, sc)
        else:
            status, data = client.otpsc(session_id, _ask("OTPSC (OTP followed by your secret code): ", secret=True))
        if status != 200:
            _err(f"OTPSC rejected ({status}): {data.get('error') if data else ''}")
            return EXIT_REJECTED
        if data["outcome"] == "accepted":
            break
        if data["state"] == "terminated":
            print(f"Login terminated ({data.get('reason', 'unknown')}).")
            return EXIT_REJECTED
        print("Incorrect OTPSC, try again." if data["outcome"] == "wrong_otp" else "Incorrect secret code, try again.")

    notice_ip = _notice_ip(client, args.inbox)
    if notice_ip is None:
        return EXIT_REJECTED
    verdict = verify_aaip(notice_ip, my_ip)
    print(f"AAIP check: server saw {notice_ip}, your IP is {my_ip} -> {verdict.value.upper()}")
    if verdict is AaipVerdict.MISMATCH:
        print("Possible man-in-the-middle: NOT sending your password.")
        return EXIT_MITM

    while True:
        status, data = client.password(session_id, _ask("Password: ", secret=True))
        if status != 200:
            _err(f"password step failed ({status}): {data.get('error') if data else ''}")
            return EXIT_REJECTED
        if data["state"] == "authenticated":
            print("Authenticated.")
            return EXIT_OK
        if data["state"] == "terminated":
            print("Login terminated.")
            return EXIT_REJECTED
        print("Wrong password, try again.")


def _load_scenario(args: argparse.Namespace) -> Scenario:
    if args.preset:
        return preset(args.preset)
    try:
        doc = json.loads(args.scenario.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise InvalidScenario(f"cannot read scenario {args.scenario}: {exc}") from exc
    return Scenario.from_dict(doc)


def cmd_simulate(args: argparse.Namespace) -> int:
    try:
        report = simulate(_load_scenario(args))
    except InvalidScenario as exc:
        _err(str(exc))
        return EXIT_USAGE
    print(report.to_json())
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    try:
        values = [json.loads(v) for v in args.values]
    except ValueError as exc:
        _err(f"bad --values: {exc}")
        return EXIT_USAGE
    try:
        rows = sweep(_load_scenario(args), args.axis, values)
    except (InvalidScenario, UnknownAxis) as exc:
        _err(str(exc))
        return EXIT_USAGE
    print(format_table(rows) if args.table else json.dumps(rows, indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
