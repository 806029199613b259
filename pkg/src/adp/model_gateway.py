"""Model gateway: the sole path from agents to model backends.

Applies per-principal rate limits and token budgets, input and output
guardrails, and deterministic policy-driven backend routing.  Provider key
material lives only inside the gateway; agents and transcripts never carry
it.  Every denial collapses to "model call failed" on the agent surface.
"""
from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence, Union

from .clock import LogicalClock
from .errors import DuplicateBackend, ModelCallFailed, NoEligibleBackend
from .identity import IdentityService
from .ledger import TranscriptWriter, canonical_json
from .policy import ActionClass, GuardrailDirection, PolicyEngine
from .rng import derive_rng
from .tool_gateway import ToolCall
from .tracing import TraceContext

MODEL_ERROR = "model call failed"


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"
    TOOL = "tool"


@dataclass(frozen=True)
class Message:
    role: Role
    content: str

    def to_dict(self) -> dict:
        return {"role": self.role.value, "content": self.content}


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int
    completion_tokens: int

    @property
    def total(self) -> int:
        return self.prompt_tokens + self.completion_tokens


@dataclass(frozen=True)
class ModelRequest:
    messages: tuple[Message, ...]
    tool_schemas: tuple[dict, ...] = ()
    max_turn_tokens: int = 256

    def __post_init__(self):
        if not self.messages:
            raise ValueError("a request needs at least one message")
        if self.max_turn_tokens <= 0:
            raise ValueError("max_turn_tokens must be > 0")

    def to_dict(self) -> dict:
        return {
            "messages": [m.to_dict() for m in self.messages],
            "tool_schemas": list(self.tool_schemas),
            "max_turn_tokens": self.max_turn_tokens,
        }


@dataclass(frozen=True)
class ModelResponse:
    kind: str  # text | tool_call
    content: Union[str, ToolCall]
    usage: Usage

    def content_dict(self):
        if self.kind == "tool_call":
            return self.content.to_dict()
        return self.content


@dataclass(frozen=True)
class BackendDescriptor:
    id: str
    cost_per_1k_tokens: int
    nominal_latency: int
    provider_key_ref: str


class RoutingStrategy(str, Enum):
    FIXED = "fixed"
    MIN_COST = "min_cost"
    MIN_LATENCY = "min_latency"


@dataclass(frozen=True)
class RoutingPolicy:
    strategy: RoutingStrategy
    allow_list: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        if not self.allow_list:
            raise ValueError("allow_list must not be empty")


def select_backend(policy: RoutingPolicy, descriptors: Sequence[BackendDescriptor]) -> str:
    """Pure deterministic selection; ties break lexicographically by id."""
    eligible = sorted((d for d in descriptors if d.id in policy.allow_list), key=lambda d: d.id)
    if not eligible:
        raise NoEligibleBackend("allow list matches no registered backend")
    if policy.strategy is RoutingStrategy.FIXED:
        return eligible[0].id
    if policy.strategy is RoutingStrategy.MIN_COST:
        return min(eligible, key=lambda d: (d.cost_per_1k_tokens, d.id)).id
    return min(eligible, key=lambda d: (d.nominal_latency, d.id)).id


# handler contract: (request, provider key, trace context) -> ModelResponse
BackendHandler = Callable[[ModelRequest, str, TraceContext], ModelResponse]


class ModelGateway:
    def __init__(
        self,
        identity: IdentityService,
        policy: PolicyEngine,
        writer: TranscriptWriter,
        clock: LogicalClock,
        seed: int = 0,
    ):
        self._identity = identity
        self._policy = policy
        self._writer = writer
        self._clock = clock
        self._backends: dict[str, tuple[BackendDescriptor, BackendHandler]] = {}
        self._keys: dict[str, str] = {}  # provider_key_ref -> key material, gateway-held
        self._key_rng = derive_rng(seed, "provider-keys")
        self._routing: Optional[RoutingPolicy] = None
        self._invocations: dict[str, int] = {}
        self._lock = threading.Lock()

    # -- configuration -------------------------------------------------

    def register_backend(
        self,
        admin_token: str,
        descriptor: BackendDescriptor,
        handler: BackendHandler,
        provider_key: Optional[str] = None,
    ) -> None:
        self._identity.require_admin(admin_token)
        if descriptor.id in self._backends:
            raise DuplicateBackend(descriptor.id)
        if provider_key is None:
            provider_key = "pk-" + format(self._key_rng.getrandbits(128), "032x")
        self._backends[descriptor.id] = (descriptor, handler)
        self._keys[descriptor.provider_key_ref] = provider_key
        self._invocations.setdefault(descriptor.id, 0)

    def load_routing(self, admin_token: str, policy: RoutingPolicy) -> None:
        self._identity.require_admin(admin_token)
        self._routing = policy

    def provider_key_material(self) -> list[str]:
        """Key material for confinement audits; infrastructure-side only."""
        return sorted(self._keys.values())

    def invocation_count(self, backend_id: str) -> int:
        with self._lock:
            return self._invocations.get(backend_id, 0)

    def total_invocations(self) -> int:
        with self._lock:
            return sum(self._invocations.values())

    # -- agent surface -------------------------------------------------

    def complete(self, token: str, request: ModelRequest) -> ModelResponse:
        principal, scope = self._identity.resolve(token)
        actor = principal.id
        request_hash = hashlib.sha256(canonical_json(request.to_dict())).hexdigest()

        rate_policies = [
            self._policy.rate_policies[ref]
            for ref in scope.rate_refs
            if ref in self._policy.rate_policies
            and self._policy.rate_policies[ref].action_class is ActionClass.MODEL_CALL
        ]
        if rate_policies:
            allowed, denied_by = self._policy.check_rates(actor, rate_policies, self._clock.now())
            if not allowed:
                raise self._deny(actor, request_hash, "rate_limited", {"policy": denied_by})

        budget = None
        if scope.budgets_ref is not None:
            budget = self._policy.budget_policies.get(scope.budgets_ref)
        if budget is not None and self._policy.budget_remaining(actor, budget) <= 0:
            # usage is charged after each call, so exhaustion denies the next
            raise self._deny(actor, request_hash, "budget_exhausted", {"budget": budget.id})

        input_rules = self._policy.guardrails_for(GuardrailDirection.INPUT)
        # system messages are infrastructure-authored and exempt
        screened = "\n".join(
            m.content for m in request.messages if m.role is not Role.SYSTEM
        )
        input_verdict = self._policy.evaluate_guardrails(
            input_rules, GuardrailDirection.INPUT, screened
        )
        if input_verdict.status != "pass":
            self._writer.emit(
                actor=actor,
                kind="guardrail_verdict",
                body={
                    "surface": "model_input",
                    "status": input_verdict.status,
                    "rule_id": input_verdict.rule_id,
                    "rule_ids": list(input_verdict.rule_ids),
                },
            )
        if input_verdict.blocked:
            raise self._deny(
                actor, request_hash, "guardrail_input", {"rule_id": input_verdict.rule_id}
            )

        try:
            backend_id = select_backend(self._require_routing(), self._descriptors())
        except NoEligibleBackend:
            raise self._deny(actor, request_hash, "backend_unavailable", {"detail": "no_backend"})

        descriptor, handler = self._backends[backend_id]
        provider_key = self._keys[descriptor.provider_key_ref]
        hop = self._writer.tracer.take_hop()
        with self._lock:
            self._invocations[backend_id] += 1
        try:
            response = handler(request, provider_key, hop.ctx)
        except Exception:
            raise self._deny(
                actor, request_hash, "backend_unavailable", {"backend": backend_id}, hop=hop
            )

        charged = 0
        if budget is not None:
            charged = self._policy.charge_budget_saturating(actor, budget, response.usage.total)

        output_verdict = None
        if response.kind == "text":
            output_rules = self._policy.guardrails_for(GuardrailDirection.OUTPUT)
            output_verdict = self._policy.evaluate_guardrails(
                output_rules, GuardrailDirection.OUTPUT, response.content
            )
            if output_verdict.status != "pass":
                self._writer.emit(
                    actor=actor,
                    kind="guardrail_verdict",
                    body={
                        "surface": "model_output",
                        "status": output_verdict.status,
                        "rule_id": output_verdict.rule_id,
                        "rule_ids": list(output_verdict.rule_ids),
                    },
                )
            if output_verdict.blocked:
                raise self._deny(
                    actor,
                    request_hash,
                    "guardrail_output",
                    {"rule_id": output_verdict.rule_id, "backend": backend_id, "charged": charged},
                    hop=hop,
                )

        self._writer.emit(
            actor=actor,
            kind="model_call",
            body={
                "backend": backend_id,
                "request_sha256": request_hash,
                "response_kind": response.kind,
                "usage": {
                    "prompt_tokens": response.usage.prompt_tokens,
                    "completion_tokens": response.usage.completion_tokens,
                },
                "charged": charged,
                "input_verdict": input_verdict.status,
                "output_verdict": output_verdict.status if output_verdict else "pass",
            },
            hop=hop,
        )
        return response

    # -- internals -----------------------------------------------------

    def _deny(
        self, actor: str, request_hash: str, reason: str, detail: dict, hop=None
    ) -> ModelCallFailed:
        body = {"reason": reason, "request_sha256": request_hash}
        body.update(detail)
        self._writer.emit(actor=actor, kind="model_denied", body=body, hop=hop)
        return ModelCallFailed(reason)

    def _require_routing(self) -> RoutingPolicy:
        if self._routing is None:
            raise NoEligibleBackend("no routing policy loaded")
        return self._routing

    def _descriptors(self) -> list[BackendDescriptor]:
        return [d for d, _ in self._backends.values()]
