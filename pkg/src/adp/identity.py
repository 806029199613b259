"""Credential issuance and resolution.

Every principal (agent, service, human) authenticates to the plane with an
opaque infrastructure-issued token that resolves to an immutable
authorization scope.  Policy changes rotate credentials; nothing ever
widens a scope in place.
"""
from __future__ import annotations

import hashlib
import re
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Optional

from .clock import LogicalClock
from .errors import (
    AuthenticationFailed,
    DuplicatePrincipal,
    MalformedScope,
    Unauthorized,
    UnknownCredential,
    UnknownPrincipal,
)
from .policy import AclEntry, Direction, valid_channel_pattern
from .rng import derive_rng

if TYPE_CHECKING:  # pragma: no cover - typing only
    from .ledger import TranscriptWriter

_CLIENT_ID_RE = re.compile(r"^[a-z0-9_]+$")
_TOOL_PATTERN_RE = re.compile(r"^[a-z0-9_-]+\*?$")


class PrincipalKind(str, Enum):
    AGENT = "agent"
    SERVICE = "service"
    HUMAN = "human"


@dataclass(frozen=True)
class Principal:
    id: str
    kind: PrincipalKind
    display_name: str


@dataclass(frozen=True)
class Scope:
    """Authorization captured at credential issuance.

    channel_acls use literal names, the {client_id} template (expanded only
    over client_ids), or a trailing * segment.  transcript_grants hold
    literal trace ids or infrastructure-registered trace labels, with the
    same trailing-* rule.
    """

    client_ids: frozenset[str] = frozenset()
    channel_acls: tuple[AclEntry, ...] = ()
    tool_acls: frozenset[str] = frozenset()
    transcript_grants: frozenset[str] = frozenset()
    budgets_ref: Optional[str] = None
    rate_refs: tuple[str, ...] = ()


def validate_scope(scope: Scope) -> None:
    for client_id in scope.client_ids:
        if not _CLIENT_ID_RE.match(client_id):
            raise MalformedScope(f"bad client id: {client_id!r}")
    for entry in scope.channel_acls:
        if not isinstance(entry.direction, Direction):
            raise MalformedScope(f"bad acl direction: {entry.direction!r}")
        if not valid_channel_pattern(entry.channel_pattern):
            raise MalformedScope(f"bad channel pattern: {entry.channel_pattern!r}")
    for pattern in scope.tool_acls:
        if not _TOOL_PATTERN_RE.match(pattern):
            raise MalformedScope(f"bad tool pattern: {pattern!r}")


def tool_pattern_matches(pattern: str, name: str) -> bool:
    if pattern.endswith("*"):
        return name.startswith(pattern[:-1])
    return pattern == name


def scope_from_dict(config: dict) -> Scope:
    """Build a Scope from its wire form (admin HTTP surface, config files)."""
    if not isinstance(config, dict):
        raise MalformedScope("scope must be a document")
    known = {
        "client_ids", "channel_acls", "tool_acls",
        "transcript_grants", "budgets_ref", "rate_refs",
    }
    unknown = set(config) - known
    if unknown:
        raise MalformedScope(f"unknown scope fields: {sorted(unknown)}")
    try:
        acls = tuple(
            AclEntry(entry["pattern"], Direction(entry["direction"]))
            for entry in config.get("channel_acls", ())
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedScope(f"bad channel acl entry: {exc}") from exc
    scope = Scope(
        client_ids=frozenset(config.get("client_ids", ())),
        channel_acls=acls,
        tool_acls=frozenset(config.get("tool_acls", ())),
        transcript_grants=frozenset(config.get("transcript_grants", ())),
        budgets_ref=config.get("budgets_ref"),
        rate_refs=tuple(config.get("rate_refs", ())),
    )
    validate_scope(scope)
    return scope


def scope_to_dict(scope: Scope) -> dict:
    return {
        "client_ids": sorted(scope.client_ids),
        "channel_acls": [
            {"pattern": e.channel_pattern, "direction": e.direction.value}
            for e in scope.channel_acls
        ],
        "tool_acls": sorted(scope.tool_acls),
        "transcript_grants": sorted(scope.transcript_grants),
        "budgets_ref": scope.budgets_ref,
        "rate_refs": list(scope.rate_refs),
    }


def token_id_of(token: str) -> str:
    """Short stable identifier for admin reference; not reversible."""
    return hashlib.sha256(token.encode("utf-8")).hexdigest()[:16]


@dataclass
class Credential:
    token: str
    token_id: str
    principal_id: str
    issued_at: int
    expires_at: Optional[int] = None
    revoked: bool = False
    scope: Scope = field(default_factory=Scope)


class IdentityService:
    """Issues, resolves, and revokes credentials; tracks admin authority.

    Resolution failures collapse to one external "authentication failed"
    while the internal reason goes to the transcript, so probing callers
    learn nothing about why a token was refused.
    """

    def __init__(self, clock: LogicalClock, seed: int = 0, writer: "TranscriptWriter | None" = None):
        self._clock = clock
        self._rng = derive_rng(seed, "credentials")
        self._writer = writer
        self._lock = threading.Lock()
        self._principals: dict[str, Principal] = {}
        self._credentials: dict[str, Credential] = {}
        self._by_token_id: dict[str, str] = {}
        self._admins: set[str] = set()

    def attach_writer(self, writer: "TranscriptWriter") -> None:
        self._writer = writer

    # -- principals ----------------------------------------------------

    def register_principal(self, principal: Principal) -> Principal:
        with self._lock:
            existing = self._principals.get(principal.id)
            if existing is not None:
                # kind is immutable after creation
                if existing != principal:
                    raise DuplicatePrincipal(principal.id)
                return existing
            self._principals[principal.id] = principal
            return principal

    def get_principal(self, principal_id: str) -> Principal:
        principal = self._principals.get(principal_id)
        if principal is None:
            raise UnknownPrincipal(principal_id)
        return principal

    def grant_admin(self, principal_id: str) -> None:
        self.get_principal(principal_id)
        with self._lock:
            self._admins.add(principal_id)

    def is_admin(self, principal_id: str) -> bool:
        return principal_id in self._admins

    # -- credentials ---------------------------------------------------

    def issue_credential(
        self, principal: Principal, scope: Scope, ttl: Optional[int] = None
    ) -> Credential:
        if principal.id not in self._principals:
            raise UnknownPrincipal(principal.id)
        validate_scope(scope)
        now = self._clock.now()
        with self._lock:
            token = format(self._rng.getrandbits(128), "032x")
            credential = Credential(
                token=token,
                token_id=token_id_of(token),
                principal_id=principal.id,
                issued_at=now,
                expires_at=None if ttl is None else now + ttl,
                scope=scope,
            )
            self._credentials[token] = credential
            self._by_token_id[credential.token_id] = token
        self._record(
            principal.id,
            {
                "action": "issued",
                "token_id": credential.token_id,
                "expires_at": credential.expires_at,
            },
        )
        return credential

    def resolve(self, token: str) -> tuple[Principal, Scope]:
        credential = self._credentials.get(token)
        if credential is None:
            self._record("unknown", {"action": "resolve_denied", "reason": "unknown"})
            raise AuthenticationFailed("unknown")
        if credential.revoked:
            self._record(
                credential.principal_id,
                {"action": "resolve_denied", "reason": "revoked", "token_id": credential.token_id},
            )
            raise AuthenticationFailed("revoked")
        if credential.expires_at is not None and self._clock.now() >= credential.expires_at:
            self._record(
                credential.principal_id,
                {"action": "resolve_denied", "reason": "expired", "token_id": credential.token_id},
            )
            raise AuthenticationFailed("expired")
        return self._principals[credential.principal_id], credential.scope

    def revoke(self, token: str) -> None:
        with self._lock:
            credential = self._credentials.get(token)
            if credential is None:
                raise UnknownCredential("no such credential")
            if credential.revoked:
                return  # idempotent
            credential.revoked = True
        self._record(
            credential.principal_id, {"action": "revoked", "token_id": credential.token_id}
        )

    def revoke_by_token_id(self, token_id: str) -> None:
        token = self._by_token_id.get(token_id)
        if token is None:
            raise UnknownCredential("no such credential")
        self.revoke(token)

    def require_admin(self, token: str) -> tuple[Principal, Scope]:
        principal, scope = self.resolve(token)
        if not self.is_admin(principal.id):
            raise Unauthorized(f"{principal.id} lacks admin authority")
        return principal, scope

    # -- transcript hook -----------------------------------------------

    def _record(self, actor: str, body: dict) -> None:
        if self._writer is not None:
            self._writer.emit(actor=actor, kind="credential_event", body=body)
