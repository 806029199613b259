"""HTTP surface over the data plane.

Every route is a thin shim over a component call; authorization decisions
stay in the components.  Agent-facing failures keep their uniform bodies,
operator-facing ones carry the real reason.
"""
from __future__ import annotations

import base64
import json
from typing import Optional

from fastapi import Body, Depends, FastAPI, Header, Query
from fastapi.responses import JSONResponse, StreamingResponse

from .backends import build_decision_handler
from .errors import (
    AlreadyDecided,
    AuthenticationFailed,
    ChannelAccessDenied,
    ConfigInvalid,
    DataPlaneError,
    DuplicateBackend,
    DuplicatePrincipal,
    DuplicateTool,
    InvalidChannelName,
    MalformedDescriptor,
    MalformedScope,
    ModelCallFailed,
    OffsetOutOfRange,
    RangeOutOfBounds,
    RateLimited,
    Unauthorized,
    UnknownChannel,
    UnknownClient,
    UnknownCredential,
    UnknownOrder,
    UnknownPrincipal,
)
from .broker import Cursor
from .identity import Principal, PrincipalKind, scope_from_dict
from .model_gateway import (
    BackendDescriptor,
    Message,
    ModelRequest,
    Role,
    RoutingPolicy,
    RoutingStrategy,
)
from .tool_gateway import ToolCall

_STATUS_BY_ERROR = [
    (AuthenticationFailed, 401),
    ((Unauthorized, ChannelAccessDenied), 403),
    ((UnknownChannel, UnknownOrder, UnknownPrincipal, UnknownCredential, UnknownClient), 404),
    (OffsetOutOfRange, 404),
    (RateLimited, 429),
    (AlreadyDecided, 409),
    ((DuplicatePrincipal, DuplicateTool, DuplicateBackend), 409),
    (ModelCallFailed, 502),
    (
        (
            ConfigInvalid,
            MalformedScope,
            MalformedDescriptor,
            InvalidChannelName,
            RangeOutOfBounds,
        ),
        400,
    ),
]


def _status_for(exc: DataPlaneError) -> int:
    for types, status in _STATUS_BY_ERROR:
        if isinstance(exc, types):
            return status
    return 500


def bearer_token(authorization: Optional[str] = Header(default=None)) -> str:
    if not authorization or not authorization.startswith("Bearer "):
        raise AuthenticationFailed("missing bearer token")
    return authorization.split(" ", 1)[1]


def build_app(plane, approvals) -> FastAPI:
    app = FastAPI(title="agent data plane", docs_url=None, redoc_url=None)

    @app.exception_handler(DataPlaneError)
    def plane_error(_request, exc: DataPlaneError):
        return JSONResponse(status_code=_status_for(exc), content={"error": str(exc)})

    @app.exception_handler(ValueError)
    def value_error(_request, exc: ValueError):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    # -- admin ---------------------------------------------------------

    @app.post("/admin/principals")
    def create_principal(body: dict = Body(...), token: str = Depends(bearer_token)):
        plane.identity.require_admin(token)
        principal = Principal(
            id=body["id"],
            kind=PrincipalKind(body.get("kind", "agent")),
            display_name=body.get("display_name", body["id"]),
        )
        plane.identity.register_principal(principal)
        return {"id": principal.id, "kind": principal.kind.value}

    @app.post("/admin/credentials")
    def create_credential(body: dict = Body(...), token: str = Depends(bearer_token)):
        plane.identity.require_admin(token)
        principal = plane.identity.get_principal(body["principal_id"])
        scope = scope_from_dict(body.get("scope", {}))
        credential = plane.identity.issue_credential(principal, scope, ttl=body.get("ttl"))
        if body.get("admin"):
            plane.identity.grant_admin(principal.id)
        return {"token": credential.token, "token_id": credential.token_id}

    @app.delete("/admin/credentials/{token_id}")
    def revoke_credential(token_id: str, token: str = Depends(bearer_token)):
        plane.identity.require_admin(token)
        plane.identity.revoke_by_token_id(token_id)
        return {"revoked": token_id}

    @app.post("/admin/policies")
    def load_policies(body: dict = Body(...), token: str = Depends(bearer_token)):
        plane.identity.require_admin(token)
        plane.policy.load_config(body)
        return {"loaded": True}

    @app.post("/admin/channels")
    def create_channel(body: dict = Body(...), token: str = Depends(bearer_token)):
        plane.broker.create_channel(token, body["name"])
        return {"name": body["name"]}

    @app.post("/admin/backends")
    def register_backend(body: dict = Body(...), token: str = Depends(bearer_token)):
        descriptor = BackendDescriptor(
            id=body["id"],
            cost_per_1k_tokens=int(body["cost_per_1k_tokens"]),
            nominal_latency=int(body["nominal_latency"]),
            provider_key_ref=body["provider_key_ref"],
        )
        handler = build_decision_handler(
            body.get("script", plane.scenario.decision.get("script", "standard")),
            plane.scenario.decision,
        )
        plane.models.register_backend(token, descriptor, handler)
        return {"id": descriptor.id}

    @app.post("/admin/routing")
    def load_routing(body: dict = Body(...), token: str = Depends(bearer_token)):
        policy = RoutingPolicy(
            strategy=RoutingStrategy(body["strategy"]),
            allow_list=frozenset(body["allow_list"]),
        )
        plane.models.load_routing(token, policy)
        return {"strategy": policy.strategy.value}

    @app.get("/broker/{channel}/inspect")
    def inspect(channel: str, offset: int = Query(0), token: str = Depends(bearer_token)):
        envelope = plane.broker.inspect_envelope(token, channel, offset)
        meta = envelope.meta
        return {
            "payload_b64": base64.b64encode(envelope.payload).decode(),
            "meta": {
                "producer_principal": meta.producer_principal,
                "trace": meta.trace.to_dict(),
                "logical_time": meta.logical_time,
                "offset": meta.offset,
                "client_binding": meta.client_binding,
            },
        }

    # -- broker (agent surface) ----------------------------------------

    @app.post("/broker/{channel}/produce")
    def produce(channel: str, body: dict = Body(...), token: str = Depends(bearer_token)):
        payload = base64.b64decode(body["payload_b64"])
        offset = plane.broker.produce(token, channel, payload)
        return {"offset": offset}

    @app.get("/broker/{channel}/consume")
    def consume(
        channel: str,
        offset: int = Query(0),
        max_records: int = Query(1, alias="max"),
        token: str = Depends(bearer_token),
    ):
        payloads, cursor = plane.broker.consume(token, Cursor(channel, offset), max_records)
        return {
            "payloads_b64": [base64.b64encode(p).decode() for p in payloads],
            "next_offset": cursor.offset,
        }

    # -- tool gateway --------------------------------------------------

    @app.get("/mcp/tools")
    def list_tools(token: str = Depends(bearer_token)):
        return {"tools": plane.tools.list_tools(token)}

    @app.post("/mcp/call")
    def call_tool(body: dict = Body(...), token: str = Depends(bearer_token)):
        result = plane.tools.call_tool(token, ToolCall(body["tool"], body.get("args", {})))
        return {"ok": result.ok, "body": result.body}

    # -- model gateway -------------------------------------------------

    @app.post("/ai/complete")
    def complete(body: dict = Body(...), token: str = Depends(bearer_token)):
        messages = tuple(
            Message(Role(m["role"]), m["content"]) for m in body.get("messages", [])
        )
        request = ModelRequest(
            messages=messages,
            tool_schemas=tuple(body.get("tool_schemas", ())),
            max_turn_tokens=int(body.get("max_turn_tokens", 256)),
        )
        response = plane.models.complete(token, request)
        return {
            "kind": response.kind,
            "content": response.content_dict(),
            "usage": {
                "prompt_tokens": response.usage.prompt_tokens,
                "completion_tokens": response.usage.completion_tokens,
            },
        }

    # -- transcripts ---------------------------------------------------

    @app.get("/transcripts")
    def transcripts(
        trace_id: Optional[str] = Query(None),
        actor: Optional[str] = Query(None),
        event_kind: Optional[str] = Query(None),
        seq_from: Optional[int] = Query(None),
        seq_to: Optional[int] = Query(None),
        token: str = Depends(bearer_token),
    ):
        _, scope = plane.identity.resolve(token)
        seq_range = None
        if seq_from is not None or seq_to is not None:
            seq_range = (seq_from or 0, seq_to if seq_to is not None else len(plane.ledger))
        records = plane.ledger.query(
            scope, trace_id=trace_id, actor=actor, event_kind=event_kind, seq_range=seq_range
        )
        return {"records": [sealed.to_dict() for sealed in records]}

    @app.get("/transcripts/verify")
    def verify():
        result = plane.ledger.verify_chain()
        return {"ok": result.ok, "broken_at": result.broken_at, "records": len(plane.ledger)}

    # -- approvals -----------------------------------------------------

    @app.get("/approvals/pending")
    def pending(token: str = Depends(bearer_token)):
        _, scope = plane.identity.resolve(token)
        return {"pending": approvals.pending_views(scope)}

    @app.post("/approvals/{order_ref}")
    def decide(order_ref: str, body: dict = Body(...), token: str = Depends(bearer_token)):
        return approvals.decide(token, order_ref, body["decision"], note=body.get("note", ""))

    @app.get("/approvals/stream")
    def stream(token: str = Depends(bearer_token)):
        _, scope = plane.identity.resolve(token)

        def events():
            version = approvals.version()
            yield _sse_event(approvals.pending_views(scope))
            while True:
                seen = approvals.wait_change(version, timeout=0.1)
                if seen != version:
                    version = seen
                    yield _sse_event(approvals.pending_views(scope))
                else:
                    yield ": keepalive\n\n"

        return StreamingResponse(events(), media_type="text/event-stream")

    return app


def _sse_event(views: list[dict]) -> str:
    return f"event: pending\ndata: {json.dumps(views, sort_keys=True)}\n\n"
