"""Scoped message broker.

Per-client channels are the only inter-agent communication path.  The
agent-facing surface is payload-only: produce takes bytes, consume returns
bytes.  Envelope metadata (producer principal, trace context, logical time,
offset, client binding) is written exclusively by the broker at append time
and is visible only to admin inspection and plane-internal consumers.
"""
from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass
from typing import Optional

from . import binding
from .clock import LogicalClock
from .errors import (
    ChannelAccessDenied,
    InvalidChannelName,
    InvalidInternalToken,
    OffsetOutOfRange,
    RateLimited,
    UnknownChannel,
)
from .identity import IdentityService
from .ledger import TranscriptWriter
from .policy import ActionClass, Direction, PolicyEngine, valid_channel_name
from .tracing import TraceContext


@dataclass(frozen=True)
class EnvelopeMeta:
    producer_principal: str
    trace: TraceContext
    logical_time: int
    offset: int
    client_binding: Optional[str] = None


@dataclass(frozen=True)
class Envelope:
    payload: bytes
    meta: EnvelopeMeta


@dataclass(frozen=True)
class Cursor:
    channel: str
    offset: int = 0


class _Channel:
    def __init__(self, name: str):
        self.name = name
        self.envelopes: list[Envelope] = []
        self.lock = threading.Lock()

    @property
    def next_offset(self) -> int:
        return len(self.envelopes)


class Broker:
    def __init__(
        self,
        identity: IdentityService,
        policy: PolicyEngine,
        writer: TranscriptWriter,
        clock: LogicalClock,
        internal_token=None,
    ):
        self._identity = identity
        self._policy = policy
        self._writer = writer
        self._clock = clock
        self._channels: dict[str, _Channel] = {}
        self._token = internal_token if internal_token is not None else object()

    @property
    def internal_token(self):
        return self._token

    # -- admin ---------------------------------------------------------

    def create_channel(self, admin_token: str, name: str) -> None:
        self._identity.require_admin(admin_token)
        if not valid_channel_name(name):
            raise InvalidChannelName(name)
        # re-creation is accepted idempotently
        self._channels.setdefault(name, _Channel(name))

    def channel_names(self) -> list[str]:
        return sorted(self._channels)

    def inspect_envelope(self, admin_token: str, channel: str, offset: int) -> Envelope:
        self._identity.require_admin(admin_token)
        ch = self._channels.get(channel)
        if ch is None:
            raise UnknownChannel(channel)
        if offset < 0 or offset >= ch.next_offset:
            raise OffsetOutOfRange(f"{channel}[{offset}]")
        return ch.envelopes[offset]

    # -- agent surface -------------------------------------------------

    def produce(self, token: str, channel: str, payload: bytes) -> int:
        """Append a payload.  The caller supplies nothing but bytes; all
        metadata is stamped by the broker."""
        principal, scope = self._identity.resolve(token)
        verdict = self._policy.check_channel_access(scope, channel, Direction.PRODUCE)
        if not verdict.allowed:
            self._writer.emit(
                actor=principal.id,
                kind="produce",
                body={"channel": channel, "outcome": "denied", "reason": verdict.reason},
            )
            raise ChannelAccessDenied(channel)
        rate_policies = [
            self._policy.rate_policies[ref]
            for ref in scope.rate_refs
            if ref in self._policy.rate_policies
            and self._policy.rate_policies[ref].action_class is ActionClass.PRODUCE
        ]
        if rate_policies:
            allowed, denied_by = self._policy.check_rates(
                principal.id, rate_policies, self._clock.now()
            )
            if not allowed:
                self._writer.emit(
                    actor=principal.id,
                    kind="produce",
                    body={
                        "channel": channel,
                        "outcome": "denied",
                        "reason": "rate_limited",
                        "policy": denied_by,
                    },
                )
                raise RateLimited(denied_by)
        ch = self._channels.get(channel)
        if ch is None:
            raise UnknownChannel(channel)
        bound = binding.current_client()
        if bound is None and len(scope.client_ids) == 1:
            # single-client scopes imply their binding; stamped out-of-band
            bound = next(iter(scope.client_ids))
        hop = self._writer.tracer.take_hop()
        with ch.lock:
            offset = ch.next_offset
            meta = EnvelopeMeta(
                producer_principal=principal.id,
                trace=hop.ctx,
                logical_time=self._clock.now(),
                offset=offset,
                client_binding=bound,
            )
            ch.envelopes.append(Envelope(payload=payload, meta=meta))
        self._writer.emit(
            actor=principal.id,
            kind="produce",
            body={
                "channel": channel,
                "offset": offset,
                "outcome": "allowed",
                "payload_sha256": hashlib.sha256(payload).hexdigest(),
                "payload_bytes": len(payload),
            },
            hop=hop,
        )
        return offset

    def consume(self, token: str, cursor: Cursor, max_records: int) -> tuple[list[bytes], Cursor]:
        envelopes, next_cursor = self._consume(token, cursor, max_records)
        return [e.payload for e in envelopes], next_cursor

    def consume_full(
        self, internal_token, token: str, cursor: Cursor, max_records: int
    ) -> tuple[list[Envelope], Cursor]:
        """Plane-internal variant that keeps envelope metadata attached.
        The ACL check still runs against the supplied credential."""
        if internal_token is not self._token:
            raise InvalidInternalToken("metadata access requires the plane-internal capability")
        return self._consume(token, cursor, max_records)

    def _consume(
        self, token: str, cursor: Cursor, max_records: int
    ) -> tuple[list[Envelope], Cursor]:
        if max_records <= 0:
            raise ValueError("max_records must be > 0")
        principal, scope = self._identity.resolve(token)
        verdict = self._policy.check_channel_access(scope, cursor.channel, Direction.CONSUME)
        if not verdict.allowed:
            self._writer.emit(
                actor=principal.id,
                kind="consume",
                body={"channel": cursor.channel, "outcome": "denied", "reason": verdict.reason},
            )
            raise ChannelAccessDenied(cursor.channel)
        ch = self._channels.get(cursor.channel)
        if ch is None:
            raise UnknownChannel(cursor.channel)
        if cursor.offset < 0:
            raise OffsetOutOfRange(str(cursor.offset))
        with ch.lock:
            window = ch.envelopes[cursor.offset : cursor.offset + max_records]
        for envelope in window:
            # the consumer's chain continues from the producer's span
            hop = self._writer.tracer.join_hop(envelope.meta.trace)
            self._writer.emit(
                actor=principal.id,
                kind="consume",
                body={
                    "channel": cursor.channel,
                    "offset": envelope.meta.offset,
                    "outcome": "allowed",
                    "payload_sha256": hashlib.sha256(envelope.payload).hexdigest(),
                },
                hop=hop,
            )
        return list(window), Cursor(channel=cursor.channel, offset=cursor.offset + len(window))
