"""Ambient client binding.

When the runtime hosts an agent step on behalf of one client, it binds that
client here.  Gateways and the broker read the binding out-of-band; agent
code has no handle to set or read it, and nothing in any payload can
override it.
"""
from __future__ import annotations

from contextlib import contextmanager
from contextvars import ContextVar
from typing import Iterator

_bound_client: ContextVar[str | None] = ContextVar("adp_client_binding", default=None)


def current_client() -> str | None:
    return _bound_client.get()


@contextmanager
def bind_client(client_id: str | None) -> Iterator[None]:
    token = _bound_client.set(client_id)
    try:
        yield
    finally:
        _bound_client.reset(token)
