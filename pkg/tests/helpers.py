import random
import threading
from contextlib import contextmanager

from jasf.channels import SmsGateway
from jasf.protocol import AccountStore, ProtocolConfig
from jasf.service import AuthService, make_server

from conftest import make_account


class FakeClock:
    def __init__(self, now=1_000_000.0):
        self.now = now

    def __call__(self):
        return self.now

    def advance(self, seconds):
        self.now += seconds


def make_service(config=None, test_mode=True, seed=99, **kw):
    store = AccountStore([make_account()])
    clock = FakeClock()
    service = AuthService(
        store, SmsGateway(kw.pop("sms_log", None)), config or ProtocolConfig(),
        test_mode=test_mode, clock=clock, rng=random.Random(seed),
    )
    return service, clock


@contextmanager
def running(service, host="127.0.0.1"):
    server = make_server(service, host, 0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://{host}:{server.server_address[1]}"
    finally:
        server.shutdown()
        server.server_close()
