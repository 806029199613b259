"""Trace context generation and hop-to-hop propagation.

Contexts follow the W3C Trace Context traceparent format.  The plane owns
an ambient "current hop" (a context variable): every transcript record
consumes the current hop and replaces it with a child, so the records of
one causal chain form a single tree rooted at the first record after
`begin_root`.  Agents never see or supply any of this.
"""
from __future__ import annotations

import re
import threading
from contextvars import ContextVar
from dataclasses import dataclass

from .errors import MalformedHeader
from .rng import derive_rng

_TRACEPARENT_RE = re.compile(r"\A00-([0-9a-f]{32})-([0-9a-f]{16})-([0-9a-f]{2})\Z")


@dataclass(frozen=True)
class TraceContext:
    trace_id: str  # 32 lowercase hex chars, not all zero
    span_id: str   # 16 lowercase hex chars, not all zero
    flags: int = 1

    def to_dict(self) -> dict:
        return {"trace_id": self.trace_id, "span_id": self.span_id, "flags": self.flags}


def format_traceparent(ctx: TraceContext) -> str:
    return f"00-{ctx.trace_id}-{ctx.span_id}-{ctx.flags:02x}"


def parse_traceparent(header: str) -> TraceContext:
    """Parse a traceparent header string.

    Only version 00 in canonical lowercase form is accepted;
    format(parse(h)) == h for every accepted h.
    """
    m = _TRACEPARENT_RE.match(header)
    if m is None:
        raise MalformedHeader(f"not a canonical traceparent: {header!r}")
    trace_id, span_id, flags_hex = m.groups()
    if trace_id == "0" * 32 or span_id == "0" * 16:
        raise MalformedHeader("all-zero trace or span id")
    return TraceContext(trace_id=trace_id, span_id=span_id, flags=int(flags_hex, 16))


@dataclass(frozen=True)
class Hop:
    """The ambient position in a trace: the context the next record will
    carry, plus the span it descends from."""

    ctx: TraceContext
    parent_span: str | None


class TraceManager:
    """Issues trace/span ids from a seeded stream and tracks the ambient hop."""

    def __init__(self, seed: int):
        self._rng = derive_rng(seed, "trace")
        self._rng_lock = threading.Lock()
        self._current: ContextVar[Hop | None] = ContextVar("adp_trace_hop", default=None)

    # -- id generation -------------------------------------------------

    def _hex_id(self, bits: int) -> str:
        # non-zero required by the traceparent grammar
        with self._rng_lock:
            while True:
                value = self._rng.getrandbits(bits)
                if value != 0:
                    return format(value, f"0{bits // 4}x")

    def new_root_context(self) -> TraceContext:
        return TraceContext(trace_id=self._hex_id(128), span_id=self._hex_id(64))

    def child_context(self, parent: TraceContext) -> TraceContext:
        return TraceContext(trace_id=parent.trace_id, span_id=self._hex_id(64), flags=parent.flags)

    # -- ambient hop ---------------------------------------------------

    def begin_root(self) -> TraceContext:
        """Start a fresh trace and make it the ambient hop."""
        ctx = self.new_root_context()
        self._current.set(Hop(ctx=ctx, parent_span=None))
        return ctx

    def current_hop(self) -> Hop | None:
        return self._current.get()

    def set_hop(self, hop: Hop | None) -> None:
        self._current.set(hop)

    def take_hop(self) -> Hop:
        """Consume the ambient hop for one record and advance to its child.

        Successive records therefore chain parent to child.  If no trace is
        active a fresh root is started first.
        """
        hop = self._current.get()
        if hop is None:
            ctx = self.new_root_context()
            hop = Hop(ctx=ctx, parent_span=None)
        self._current.set(Hop(ctx=self.child_context(hop.ctx), parent_span=hop.ctx.span_id))
        return hop

    def join_hop(self, carried: TraceContext) -> Hop:
        """Continue a trace carried by an envelope.

        The returned hop descends from the carried context; the ambient hop
        advances past it so later records keep chaining within that trace.
        """
        ctx = self.child_context(carried)
        self._current.set(Hop(ctx=self.child_context(ctx), parent_span=ctx.span_id))
        return Hop(ctx=ctx, parent_span=carried.span_id)
