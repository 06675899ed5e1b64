"""JSON-file account store and the admin operations that mutate it.

The file only ever holds salted digests. Saves are atomic: the new document is
written to a temporary file in the same directory and renamed over the old one.
"""

from __future__ import annotations

import json
import os
import tempfile
import threading
from pathlib import Path
from typing import Any

from jasf.digest import DEFAULT_ITERATIONS
from jasf.errors import UnknownUsername
from jasf.protocol import Account, AccountStore, ProtocolConfig

STORE_VERSION = 1


class FileAccountStore(AccountStore):
    def __init__(self, path: str | Path, accounts: list[Account] | tuple = ()) -> None:
        super().__init__(accounts)
        self.path = Path(path)
        self._save_lock = threading.Lock()

    @classmethod
    def open(cls, path: str | Path) -> FileAccountStore:
        """Load *path*, or start an empty store if it does not exist yet."""
        path = Path(path)
        if not path.exists():
            return cls(path)
        with path.open(encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("version") != STORE_VERSION:
            raise ValueError(f"unsupported account store version {doc.get('version')!r}")
        return cls(path, [Account.from_dict(a) for a in doc.get("accounts", [])])

    def to_document(self) -> dict[str, Any]:
        return {
            "version": STORE_VERSION,
            "accounts": [a.to_dict() for a in sorted(self, key=lambda a: a.username)],
        }

    def save(self) -> None:
        data = json.dumps(self.to_document(), indent=2, sort_keys=True)
        with self._save_lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(prefix=f".{self.path.name}.", dir=self.path.parent)
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as fh:
                    fh.write(data)
                    fh.flush()
                    os.fsync(fh.fileno())
                os.replace(tmp, self.path)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise

    def commit(self, username: str) -> None:
        self.save()


def _account(store: AccountStore, username: str) -> Account:
    account = store.get(username)
    if account is None:
        raise UnknownUsername(username)
    return account


def create_account(
    store: FileAccountStore,
    username: str,
    password: str,
    sc: str,
    primary: str,
    secondary: str,
    iterations: int = DEFAULT_ITERATIONS,
) -> Account:
    account = Account.create(username, password, sc, primary, secondary, iterations=iterations)
    store.add(account)
    store.save()
    return account


def set_sc(store: FileAccountStore, username: str, sc: str, iterations: int = DEFAULT_ITERATIONS) -> Account:
    with store.lock(username):
        account = _account(store, username)
        account.set_sc(sc, iterations)
        store.save()
    return account


def set_mobiles(store: FileAccountStore, username: str, primary: str, secondary: str) -> Account:
    with store.lock(username):
        account = _account(store, username)
        account.set_mobiles(primary, secondary)
        store.save()
    return account


def mint_spl(
    store: FileAccountStore,
    username: str,
    rng: Any,
    config: ProtocolConfig | None = None,
    iterations: int = DEFAULT_ITERATIONS,
) -> list[str]:
    """Replace the user's spl-passcodes; the returned plaintext is shown once."""
    config = config or ProtocolConfig()
    with store.lock(username):
        account = _account(store, username)
        codes = account.mint_spl_passcodes(
            rng, config.spl_passcode_count, config.spl_passcode_length, iterations
        )
        store.save()
    return codes
