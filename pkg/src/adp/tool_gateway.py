"""Tool gateway: the sole path from agents to upstream systems.

The gateway resolves the caller's credential, filters tool visibility,
rejects reserved parameters, applies rate limits, injects the client scope
from out-of-band context, invokes the upstream, and redacts results on the
way back.  Agents see one uniform failure string for every denial; the
distinct internal kinds exist only in the transcript.
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import jsonschema

from . import binding
from .clock import LogicalClock
from .errors import DuplicateTool, MalformedDescriptor
from .identity import IdentityService, tool_pattern_matches
from .ledger import TranscriptWriter, canonical_json
from .policy import ActionClass, PolicyEngine
from .tracing import TraceContext

TOOL_ERROR = "tool call failed"
RESERVED_PARAMS = frozenset({"client_id"})

_TOOL_NAME_RE = re.compile(r"^[a-z0-9_-]+$")

# handler contract: (injected client id or None, args, trace context) -> document
UpstreamHandler = Callable[[Optional[str], dict, TraceContext], dict]


@dataclass(frozen=True)
class ToolDescriptor:
    name: str
    params_schema: dict
    scoped: bool
    action_class: ActionClass
    upstream_id: str
    injected_param: str = "client_id"


@dataclass(frozen=True)
class ToolCall:
    tool: str
    args: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"tool": self.tool, "args": self.args}


@dataclass(frozen=True)
class ToolResult:
    ok: bool
    body: dict
    error_kind: Optional[str] = None  # always None on the agent surface


def _failed() -> ToolResult:
    return ToolResult(ok=False, body={"error": TOOL_ERROR})


class ToolGateway:
    def __init__(
        self,
        identity: IdentityService,
        policy: PolicyEngine,
        writer: TranscriptWriter,
        clock: LogicalClock,
    ):
        self._identity = identity
        self._policy = policy
        self._writer = writer
        self._clock = clock
        self._tools: dict[str, tuple[ToolDescriptor, UpstreamHandler]] = {}
        self._observer: Optional[Callable[[str, Optional[str], dict], None]] = None

    # -- registration --------------------------------------------------

    def register_upstream(
        self, admin_token: str, descriptor: ToolDescriptor, handler: UpstreamHandler
    ) -> None:
        self._identity.require_admin(admin_token)
        if not _TOOL_NAME_RE.match(descriptor.name):
            raise MalformedDescriptor(f"bad tool name: {descriptor.name!r}")
        if not isinstance(descriptor.params_schema, dict):
            raise MalformedDescriptor("params_schema must be a schema document")
        for reserved in RESERVED_PARAMS:
            if reserved in descriptor.params_schema.get("properties", {}):
                raise MalformedDescriptor(f"schema may not declare reserved param {reserved!r}")
        if descriptor.name in self._tools:
            raise DuplicateTool(descriptor.name)
        try:
            jsonschema.Draft202012Validator.check_schema(descriptor.params_schema)
        except jsonschema.SchemaError as exc:
            raise MalformedDescriptor(f"bad params schema: {exc}") from exc
        self._tools[descriptor.name] = (descriptor, handler)

    def set_upstream_observer(
        self, observer: Optional[Callable[[str, Optional[str], dict], None]]
    ) -> None:
        """Instrumentation hook: called (tool, injected client, args) for
        every upstream invocation.  Used by isolation audits."""
        self._observer = observer

    # -- agent surface -------------------------------------------------

    def list_tools(self, token: str) -> list[dict]:
        _, scope = self._identity.resolve(token)
        visible = []
        for name in sorted(self._tools):
            descriptor, _ = self._tools[name]
            if any(tool_pattern_matches(p, name) for p in sorted(scope.tool_acls)):
                visible.append({"name": descriptor.name, "params_schema": descriptor.params_schema})
        return visible

    def call_tool(self, token: str, call: ToolCall) -> ToolResult:
        principal, scope = self._identity.resolve(token)
        actor = principal.id
        args = dict(call.args)

        # visibility: an out-of-scope tool and an unknown tool are the same
        entry = self._tools.get(call.tool)
        in_scope = any(tool_pattern_matches(p, call.tool) for p in sorted(scope.tool_acls))
        if entry is None or not in_scope:
            return self._deny(actor, call, "access_denied", "out_of_scope")
        descriptor, handler = entry

        for reserved in RESERVED_PARAMS:
            if reserved in args:
                return self._deny(actor, call, "invalid_args", "reserved_param")

        validator = jsonschema.Draft202012Validator(descriptor.params_schema)
        if not validator.is_valid(args):
            return self._deny(actor, call, "invalid_args", "schema")

        rate_policies = [
            self._policy.rate_policies[ref]
            for ref in scope.rate_refs
            if ref in self._policy.rate_policies
            and self._policy.rate_policies[ref].action_class is descriptor.action_class
        ]
        if rate_policies:
            allowed, denied_by = self._policy.check_rates(actor, rate_policies, self._clock.now())
            if not allowed:
                return self._deny(actor, call, "rate_limited", denied_by)

        client_id: Optional[str] = None
        if descriptor.scoped:
            if len(scope.client_ids) == 1:
                client_id = next(iter(scope.client_ids))
            else:
                client_id = binding.current_client()
                if client_id is None:
                    return self._deny(actor, call, "access_denied", "no_client_binding")
                if client_id not in scope.client_ids:
                    return self._deny(actor, call, "access_denied", "binding_out_of_scope")

        hop = self._writer.tracer.take_hop()
        if self._observer is not None:
            self._observer(call.tool, client_id, dict(args))
        try:
            result = handler(client_id, dict(args), hop.ctx)
        except Exception as exc:  # upstream plug-ins must not crash the gateway
            self._writer.emit(
                actor=actor,
                kind="tool_call",
                body={
                    "tool": call.tool,
                    "args": self._redact_document(args)[0],
                    "client_id": client_id,
                    "outcome": "error",
                    "kind": "upstream_error",
                    "error": type(exc).__name__,
                },
                hop=hop,
            )
            return _failed()

        redacted_result, result_count = self._redact_document(result)
        redacted_args, _ = self._redact_document(args)
        prehash = hashlib.sha256(canonical_json(result)).hexdigest()
        self._writer.emit(
            actor=actor,
            kind="tool_call",
            body={
                "tool": call.tool,
                "args": redacted_args,
                "client_id": client_id,
                "outcome": "ok",
                "result": redacted_result,
                "redactions": result_count,
            },
            prehash=prehash,
            hop=hop,
        )
        return ToolResult(ok=True, body=redacted_result)

    # -- internals -----------------------------------------------------

    def _deny(self, actor: str, call: ToolCall, kind: str, reason: str) -> ToolResult:
        redacted_args, _ = self._redact_document(dict(call.args))
        self._writer.emit(
            actor=actor,
            kind="tool_denied",
            body={"tool": call.tool, "args": redacted_args, "kind": kind, "reason": reason},
        )
        return _failed()

    def _redact_document(self, document: Any) -> tuple[Any, int]:
        rules = self._policy.redactions
        count = 0

        def walk(node: Any) -> Any:
            nonlocal count
            if isinstance(node, str):
                redacted, n = self._policy.redact(rules, node)
                count += n
                return redacted
            if isinstance(node, dict):
                return {k: walk(v) for k, v in node.items()}
            if isinstance(node, list):
                return [walk(v) for v in node]
            return node

        return walk(document), count
