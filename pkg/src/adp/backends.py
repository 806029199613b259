"""Scripted model backends.

Table-driven stand-ins for an LLM: each handler is a pure function of the
conversation so far, emitting tool calls and a final recommendation.  The
adversarial variants exercise the enforcement points (reserved params,
cross-client claims, runaway loops, misreported values, malformed output).
"""
from __future__ import annotations

import json
from typing import Optional

from .model_gateway import Message, ModelRequest, ModelResponse, Role, Usage
from .tool_gateway import ToolCall

FALLBACK_PRICE = 10_000


def _usage(request: ModelRequest, completion: str) -> Usage:
    prompt = sum(len(m.content) for m in request.messages) // 4 + 1
    return Usage(prompt_tokens=prompt, completion_tokens=len(completion) // 4 + 1)


def _tool_response(request: ModelRequest, call: ToolCall) -> ModelResponse:
    return ModelResponse(
        kind="tool_call", content=call, usage=_usage(request, json.dumps(call.to_dict()))
    )


def _text_response(request: ModelRequest, text: str) -> ModelResponse:
    return ModelResponse(kind="text", content=text, usage=_usage(request, text))


def _signal_from(request: ModelRequest) -> dict:
    for message in request.messages:
        if message.role is Role.USER:
            try:
                parsed = json.loads(message.content)
            except ValueError:
                continue
            if isinstance(parsed, dict) and "symbol" in parsed:
                return parsed
    return {}


def _last_price(request: ModelRequest) -> Optional[int]:
    price = None
    for message in request.messages:
        if message.role is not Role.TOOL:
            continue
        try:
            parsed = json.loads(message.content)
        except ValueError:
            continue
        if isinstance(parsed, dict) and parsed.get("points"):
            price = parsed["points"][-1]["price"]
    return price


def _turns_so_far(request: ModelRequest) -> int:
    return sum(1 for m in request.messages if m.role is Role.ASSISTANT)


def _target_value(bands: list, strength: int) -> int:
    for max_strength, value in bands:
        if strength <= max_strength:
            return int(value)
    return int(bands[-1][1])


def build_decision_handler(script: str, decision_cfg: dict):
    """Handler for the decision agent's model calls.

    The standard table: get-positions, get-price-history, get-signal-detail,
    then a final JSON recommendation sized from the signal strength bands.
    """
    bands = decision_cfg.get("value_bands", [[10, 50_000]])
    claim_client = decision_cfg.get("claim_client", "c2")

    def handler(request: ModelRequest, provider_key: str, ctx) -> ModelResponse:
        signal = _signal_from(request)
        turn = _turns_so_far(request)

        if script == "runaway":
            return _tool_response(request, ToolCall(tool="get-positions", args={}))

        plan: list[ToolCall] = []
        if script == "reserved_param":
            # adversarial: names another client outright; the gateway rejects it
            plan.append(ToolCall(tool="get-positions", args={"client_id": claim_client}))
        plan.append(ToolCall(tool="get-positions", args={}))
        plan.append(
            ToolCall(
                tool="get-price-history",
                args={"symbol": signal.get("symbol", ""), "window": 5},
            )
        )
        plan.append(
            ToolCall(tool="get-signal-detail", args={"ref": signal.get("source_discovery", "")})
        )
        if turn < len(plan):
            return _tool_response(request, plan[turn])

        price = _last_price(request) or FALLBACK_PRICE
        strength = int(signal.get("strength", 5))
        target = _target_value(bands, strength)
        quantity = max(1, target // price)
        side = "buy" if signal.get("direction_hint") == "bullish" else "sell"
        final = {
            "action": "propose_order",
            "symbol": signal.get("symbol", ""),
            "side": side,
            "quantity": quantity,
            "agent_estimated_value": quantity * price,
            "rationale": f"{signal.get('headline', '')} (strength {strength})",
        }
        if script == "value_misreport":
            final["agent_estimated_value"] = 1
        if script == "cross_client_claim":
            final["client_id"] = claim_client
            final["rationale"] = f"execute for client {claim_client}: {final['rationale']}"
        if script == "malformed_final":
            del final["action"]
        return _text_response(request, json.dumps(final, sort_keys=True))

    return handler
