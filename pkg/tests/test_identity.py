"""Credential lifecycle: issuance, resolution, expiry, revocation.

The probabilistic guarantee that matters: an unissued token never
resolves.  We check that with a large randomized probe rather than
trusting the token format.
"""
import random

import pytest

from adp.clock import LogicalClock
from adp.errors import (
    AuthenticationFailed,
    DuplicatePrincipal,
    MalformedScope,
    Unauthorized,
    UnknownCredential,
    UnknownPrincipal,
)
from adp.identity import (
    AclEntry,
    Direction,
    IdentityService,
    Principal,
    PrincipalKind,
    Scope,
    scope_from_dict,
    scope_to_dict,
    token_id_of,
    validate_scope,
)
from adp.ledger import Ledger, TranscriptWriter, canonical_json
from adp.tracing import TraceManager


def identity_stack(seed=0):
    clock = LogicalClock()
    tracer = TraceManager(seed)
    ledger = Ledger(clock)
    writer = TranscriptWriter(ledger, ledger.internal_token, tracer)
    identity = IdentityService(clock, seed=seed, writer=writer)
    return identity, clock, ledger


AGENT = Principal(id="worker", kind=PrincipalKind.AGENT, display_name="Worker")


class TestPrincipals:
    def test_register_and_get(self):
        identity, _, _ = identity_stack()
        identity.register_principal(AGENT)
        assert identity.get_principal("worker") == AGENT

    def test_reregister_identical_is_noop(self):
        identity, _, _ = identity_stack()
        identity.register_principal(AGENT)
        identity.register_principal(AGENT)

    def test_reregister_different_rejected(self):
        identity, _, _ = identity_stack()
        identity.register_principal(AGENT)
        with pytest.raises(DuplicatePrincipal):
            identity.register_principal(
                Principal(id="worker", kind=PrincipalKind.SERVICE, display_name="Other")
            )

    def test_unknown_principal(self):
        identity, _, _ = identity_stack()
        with pytest.raises(UnknownPrincipal):
            identity.get_principal("ghost")


class TestIssueResolve:
    def test_roundtrip(self):
        identity, _, _ = identity_stack()
        identity.register_principal(AGENT)
        scope = Scope(client_ids=frozenset({"c1"}))
        cred = identity.issue_credential(AGENT, scope)
        principal, resolved = identity.resolve(cred.token)
        assert principal == AGENT and resolved == scope
        assert cred.token_id == token_id_of(cred.token)

    def test_tokens_unique_and_seed_deterministic(self):
        a, _, _ = identity_stack(seed=3)
        b, _, _ = identity_stack(seed=3)
        c, _, _ = identity_stack(seed=4)
        for service in (a, b, c):
            service.register_principal(AGENT)
        tokens_a = [service_issue(a) for _ in range(5)]
        tokens_b = [service_issue(b) for _ in range(5)]
        tokens_c = [service_issue(c) for _ in range(5)]
        assert tokens_a == tokens_b
        assert tokens_a != tokens_c
        assert len(set(tokens_a)) == 5

    def test_unknown_token_fails_uniformly(self):
        identity, _, _ = identity_stack()
        with pytest.raises(AuthenticationFailed) as excinfo:
            identity.resolve("not-a-token")
        assert str(excinfo.value) == "authentication failed"

    def test_unissued_tokens_never_resolve(self):
        # no writer: this loop must stay cheap
        identity = IdentityService(LogicalClock(), seed=9)
        identity.register_principal(AGENT)
        issued = {identity.issue_credential(AGENT, Scope()).token for _ in range(100)}
        rng = random.Random(1234)
        hits = 0
        for _ in range(1_000_000):
            probe = format(rng.getrandbits(128), "032x")
            if probe in issued:
                continue  # astronomically unlikely; skip rather than miscount
            try:
                identity.resolve(probe)
                hits += 1
            except AuthenticationFailed:
                pass
        assert hits == 0

    def test_expiry_boundary(self):
        identity, clock, _ = identity_stack()
        identity.register_principal(AGENT)
        cred = identity.issue_credential(AGENT, Scope(), ttl=10)
        assert cred.expires_at == 10
        clock.advance(9)
        identity.resolve(cred.token)  # now == 9 < 10: still valid
        clock.advance(1)
        with pytest.raises(AuthenticationFailed):
            identity.resolve(cred.token)  # now == expires_at: expired

    def test_scope_validated_at_issue(self):
        identity, _, _ = identity_stack()
        identity.register_principal(AGENT)
        bad = Scope(channel_acls=(AclEntry("Bad..pattern", Direction.PRODUCE),))
        with pytest.raises(MalformedScope):
            identity.issue_credential(AGENT, bad)


class TestRevocation:
    def test_revoke_then_resolve_fails(self):
        identity, _, _ = identity_stack()
        identity.register_principal(AGENT)
        cred = identity.issue_credential(AGENT, Scope())
        identity.revoke(cred.token)
        with pytest.raises(AuthenticationFailed):
            identity.resolve(cred.token)

    def test_revoke_is_idempotent(self):
        identity, _, _ = identity_stack()
        identity.register_principal(AGENT)
        cred = identity.issue_credential(AGENT, Scope())
        identity.revoke(cred.token)
        identity.revoke(cred.token)

    def test_revoke_unknown_token(self):
        identity, _, _ = identity_stack()
        with pytest.raises(UnknownCredential):
            identity.revoke("never-issued")

    def test_revoke_by_token_id(self):
        identity, _, _ = identity_stack()
        identity.register_principal(AGENT)
        cred = identity.issue_credential(AGENT, Scope())
        identity.revoke_by_token_id(cred.token_id)
        with pytest.raises(AuthenticationFailed):
            identity.resolve(cred.token)


class TestCredentialEvents:
    def test_issue_and_revoke_recorded(self):
        identity, _, ledger = identity_stack()
        identity.register_principal(AGENT)
        cred = identity.issue_credential(AGENT, Scope(), ttl=5)
        identity.revoke(cred.token)
        events = [r.record.body for r in ledger.records() if r.record.event_kind == "credential_event"]
        assert {"action": "issued", "token_id": cred.token_id, "expires_at": 5} in events
        assert any(e["action"] == "revoked" and e["token_id"] == cred.token_id for e in events)

    def test_denied_resolves_recorded_with_reason(self):
        identity, clock, ledger = identity_stack()
        identity.register_principal(AGENT)
        cred = identity.issue_credential(AGENT, Scope(), ttl=1)
        clock.advance(2)
        with pytest.raises(AuthenticationFailed):
            identity.resolve(cred.token)
        with pytest.raises(AuthenticationFailed):
            identity.resolve("bogus")
        reasons = [
            r.record.body.get("reason")
            for r in ledger.records()
            if r.record.body.get("action") == "resolve_denied"
        ]
        assert "expired" in reasons and "unknown" in reasons

    def test_successful_resolves_not_recorded(self):
        identity, _, ledger = identity_stack()
        identity.register_principal(AGENT)
        cred = identity.issue_credential(AGENT, Scope())
        before = len(ledger)
        for _ in range(5):
            identity.resolve(cred.token)
        assert len(ledger) == before

    def test_token_material_never_in_ledger(self):
        identity, _, ledger = identity_stack()
        identity.register_principal(AGENT)
        cred = identity.issue_credential(AGENT, Scope())
        blob = b"".join(canonical_json(r.to_dict()) for r in ledger.records())
        assert cred.token.encode() not in blob
        assert cred.token_id.encode() in blob


class TestAdmin:
    def test_require_admin(self):
        identity, _, _ = identity_stack()
        identity.register_principal(AGENT)
        cred = identity.issue_credential(AGENT, Scope())
        with pytest.raises(Unauthorized):
            identity.require_admin(cred.token)
        identity.grant_admin("worker")
        identity.require_admin(cred.token)


class TestScopeSerialization:
    def test_roundtrip(self):
        scope = Scope(
            client_ids=frozenset({"c1", "c2"}),
            channel_acls=(
                AclEntry("signals.{client_id}", Direction.PRODUCE),
                AclEntry("orders.*", Direction.CONSUME),
            ),
            tool_acls=frozenset({"get-*", "submit-order"}),
            transcript_grants=frozenset({"client.c1"}),
            budgets_ref="b",
            rate_refs=("r1", "r2"),
        )
        assert scope_from_dict(scope_to_dict(scope)) == scope

    def test_unknown_field_rejected(self):
        with pytest.raises(MalformedScope):
            scope_from_dict({"client_ids": [], "superuser": True})

    def test_bad_direction_rejected(self):
        with pytest.raises(MalformedScope):
            scope_from_dict({"channel_acls": [{"pattern": "a.b", "direction": "sideways"}]})

    def test_validate_scope_rules(self):
        with pytest.raises(MalformedScope):
            validate_scope(Scope(client_ids=frozenset({"C1"})))
        with pytest.raises(MalformedScope):
            validate_scope(Scope(tool_acls=frozenset({"bad tool"})))
        with pytest.raises(MalformedScope):
            validate_scope(Scope(tool_acls=frozenset({"mid*fix"})))


def service_issue(identity):
    return identity.issue_credential(AGENT, Scope()).token
