"""Hash-chained transcript ledger.

Every broker, gateway, router, and approval operation lands here as one
canonical record sealed over the previous record's hash.  Appends require
an in-process capability object that no agent credential can reach; agents
interact with transcripts only through the grant-filtered query surface.
"""
from __future__ import annotations

import hashlib
import json
import struct
import threading
from dataclasses import dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Optional

from .clock import LogicalClock
from .errors import InvalidInternalToken, MalformedRecord, RangeOutOfBounds
from .tracing import Hop, TraceContext, TraceManager

if TYPE_CHECKING:  # pragma: no cover - typing only
    from .identity import Scope

EVENT_KINDS = frozenset(
    {
        "credential_event",
        "produce",
        "consume",
        "tool_call",
        "tool_denied",
        "model_call",
        "model_denied",
        "route_decision",
        "approval_decision",
        "order_submitted",
        "order_filled",
        "guardrail_verdict",
    }
)

GENESIS_HASH = "0" * 64

_SPAN_HEX = 16
_MAX_FRAME = 1 << 26  # 64 MiB; larger frames mean a corrupt length prefix


def canonical_json(document) -> bytes:
    """UTF-8, sorted keys, minimal separators. The only byte form that is
    ever hashed or journaled."""
    return json.dumps(
        document, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")


@dataclass(frozen=True)
class TranscriptRecord:
    seq: int
    logical_time: int
    trace: TraceContext
    parent_span: Optional[str]
    actor_principal: str
    event_kind: str
    body: dict
    body_prehash: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "logical_time": self.logical_time,
            "trace": self.trace.to_dict(),
            "parent_span": self.parent_span,
            "actor_principal": self.actor_principal,
            "event_kind": self.event_kind,
            "body": self.body,
            "body_prehash": self.body_prehash,
        }


@dataclass(frozen=True)
class SealedRecord:
    record: TranscriptRecord
    prev_hash: str
    this_hash: str

    def to_dict(self) -> dict:
        return {
            "record": self.record.to_dict(),
            "prev_hash": self.prev_hash,
            "this_hash": self.this_hash,
        }


def seal_hash(prev_hash: str, record_dict: dict) -> str:
    return hashlib.sha256(bytes.fromhex(prev_hash) + canonical_json(record_dict)).hexdigest()


@dataclass(frozen=True)
class VerifyResult:
    ok: bool
    broken_at: Optional[int] = None


class _InternalToken:
    """Capability object for appends. Held by the plane, never by agents."""

    __slots__ = ()


class Ledger:
    def __init__(self, clock: LogicalClock, journal_path: str | Path | None = None):
        self._clock = clock
        self._records: list[SealedRecord] = []
        self._token = _InternalToken()
        self._lock = threading.Lock()
        self._trace_labels: dict[str, set[str]] = {}
        self._journal = open(journal_path, "ab") if journal_path is not None else None

    @property
    def internal_token(self) -> _InternalToken:
        return self._token

    def close(self) -> None:
        if self._journal is not None:
            self._journal.flush()
            self._journal.close()
            self._journal = None

    # -- append --------------------------------------------------------

    def append(self, internal_token, record: TranscriptRecord) -> SealedRecord:
        if internal_token is not self._token:
            raise InvalidInternalToken("append requires the plane-internal capability")
        self._validate(record)
        with self._lock:
            stamped = replace(record, seq=len(self._records), logical_time=self._clock.now())
            prev = self._records[-1].this_hash if self._records else GENESIS_HASH
            sealed = SealedRecord(
                record=stamped, prev_hash=prev, this_hash=seal_hash(prev, stamped.to_dict())
            )
            if self._journal is not None:
                frame = canonical_json(sealed.to_dict())
                self._journal.write(struct.pack(">I", len(frame)) + frame)
                self._journal.flush()
            self._records.append(sealed)
            return sealed

    def _validate(self, record: TranscriptRecord) -> None:
        if record.event_kind not in EVENT_KINDS:
            raise MalformedRecord(f"unknown event kind: {record.event_kind!r}")
        if not isinstance(record.body, dict):
            raise MalformedRecord("body must be a document")
        if record.parent_span is not None and len(record.parent_span) != _SPAN_HEX:
            raise MalformedRecord("parent_span must be a 16 hex char span id")
        try:
            canonical_json(record.body)
        except (TypeError, ValueError) as exc:
            raise MalformedRecord(f"body not canonicalizable: {exc}") from exc

    # -- read ----------------------------------------------------------

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)

    def records(self) -> list[SealedRecord]:
        with self._lock:
            return list(self._records)

    def hash_sequence(self) -> list[str]:
        with self._lock:
            return [r.this_hash for r in self._records]

    # -- verification --------------------------------------------------

    def verify_chain(self, from_seq: int = 0, to_seq: Optional[int] = None) -> VerifyResult:
        records = self.records()
        if to_seq is None:
            to_seq = len(records) - 1
        if from_seq < 0 or to_seq >= len(records) or (records and from_seq > to_seq + 1):
            raise RangeOutOfBounds(f"[{from_seq}, {to_seq}] outside ledger of {len(records)}")
        prev = GENESIS_HASH if from_seq == 0 else records[from_seq - 1].this_hash
        for i in range(from_seq, to_seq + 1):
            sealed = records[i]
            if (
                sealed.record.seq != i
                or sealed.prev_hash != prev
                or seal_hash(prev, sealed.record.to_dict()) != sealed.this_hash
            ):
                return VerifyResult(ok=False, broken_at=i)
            prev = sealed.this_hash
        return VerifyResult(ok=True)

    # -- trace labels and query ----------------------------------------

    def register_trace_label(self, internal_token, trace_id: str, label: str) -> None:
        """Attach an audit label (e.g. client.c1) to a trace so transcript
        grants can be expressed against labels instead of raw ids."""
        if internal_token is not self._token:
            raise InvalidInternalToken("labeling requires the plane-internal capability")
        with self._lock:
            self._trace_labels.setdefault(trace_id, set()).add(label)

    def trace_labels(self, trace_id: str) -> set[str]:
        with self._lock:
            return set(self._trace_labels.get(trace_id, ()))

    def query(
        self,
        scope: "Scope",
        trace_id: Optional[str] = None,
        actor: Optional[str] = None,
        event_kind: Optional[str] = None,
        seq_range: Optional[tuple[int, int]] = None,
    ) -> list[SealedRecord]:
        """Grant filtering first, then the caller's filters.  An empty grant
        set sees nothing regardless of filters."""
        grants = sorted(scope.transcript_grants)
        out: list[SealedRecord] = []
        for sealed in self.records():
            rec = sealed.record
            if not self._granted(grants, rec.trace.trace_id):
                continue
            if trace_id is not None and rec.trace.trace_id != trace_id:
                continue
            if actor is not None and rec.actor_principal != actor:
                continue
            if event_kind is not None and rec.event_kind != event_kind:
                continue
            if seq_range is not None and not (seq_range[0] <= rec.seq <= seq_range[1]):
                continue
            out.append(sealed)
        return out

    def _granted(self, grants: list[str], trace_id: str) -> bool:
        if not grants:
            return False
        labels = self.trace_labels(trace_id)
        for grant in grants:
            if grant.endswith("*"):
                prefix = grant[:-1]
                if trace_id.startswith(prefix) or any(l.startswith(prefix) for l in labels):
                    return True
            elif grant == trace_id or grant in labels:
                return True
        return False


class TranscriptWriter:
    """Bound (ledger, capability, tracer) handed to infrastructure
    components so each emitted record consumes one trace hop."""

    def __init__(self, ledger: Ledger, internal_token, tracer: TraceManager):
        self._ledger = ledger
        self._token = internal_token
        self.tracer = tracer

    def emit(
        self,
        *,
        actor: str,
        kind: str,
        body: dict,
        prehash: Optional[str] = None,
        hop: Optional[Hop] = None,
    ) -> SealedRecord:
        if hop is None:
            hop = self.tracer.take_hop()
        record = TranscriptRecord(
            seq=-1,
            logical_time=-1,
            trace=hop.ctx,
            parent_span=hop.parent_span,
            actor_principal=actor,
            event_kind=kind,
            body=body,
            body_prehash=prehash,
        )
        return self._ledger.append(self._token, record)

    def label_trace(self, trace_id: str, label: str) -> None:
        self._ledger.register_trace_label(self._token, trace_id, label)


# ---------------------------------------------------------------------------
# journal files
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JournalVerifyResult:
    ok: bool
    broken_at: Optional[int] = None
    records: int = 0


def _parse_frame(frame: bytes) -> Optional[dict]:
    try:
        document = json.loads(frame.decode("utf-8"))
    except (ValueError, UnicodeDecodeError):
        return None
    # storage must hold the exact canonical bytes; any re-encoding drift
    # (or a flip that keeps the JSON parseable) is tampering
    if canonical_json(document) != frame:
        return None
    if not isinstance(document, dict):
        return None
    if set(document) != {"record", "prev_hash", "this_hash"}:
        return None
    if not isinstance(document["record"], dict):
        return None
    return document


def iter_journal_frames(path: str | Path) -> Iterable[bytes]:
    """Yield raw frames; stops at the first structurally broken prefix."""
    with open(path, "rb") as fh:
        while True:
            header = fh.read(4)
            if not header:
                return
            if len(header) < 4:
                yield b""  # truncated header counts as a broken frame
                return
            (length,) = struct.unpack(">I", header)
            if length == 0 or length > _MAX_FRAME:
                yield b""
                return
            frame = fh.read(length)
            yield frame
            if len(frame) < length:
                return


def verify_journal(path: str | Path) -> JournalVerifyResult:
    prev = GENESIS_HASH
    count = 0
    for i, frame in enumerate(iter_journal_frames(path)):
        document = _parse_frame(frame)
        if document is None:
            return JournalVerifyResult(ok=False, broken_at=i, records=count)
        record = document["record"]
        if (
            record.get("seq") != i
            or document["prev_hash"] != prev
            or seal_hash(prev, record) != document["this_hash"]
        ):
            return JournalVerifyResult(ok=False, broken_at=i, records=count)
        prev = document["this_hash"]
        count += 1
    return JournalVerifyResult(ok=True, records=count)


def read_journal_hashes(path: str | Path) -> list[str]:
    """this_hash sequence of an intact journal; verify first if unsure."""
    hashes: list[str] = []
    for frame in iter_journal_frames(path):
        document = _parse_frame(frame)
        if document is None:
            raise MalformedRecord("journal is not parseable; run verification")
        hashes.append(document["this_hash"])
    return hashes
