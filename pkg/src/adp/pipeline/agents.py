"""Scripted agent runtimes for the portfolio pipeline.

Each runtime is the harness around one agent role: it moves bytes between
the broker, the gateways, and the agent logic, and never touches envelope
metadata.  The decision role's "reasoning" lives in the scripted model
backend; here we only relay its tool calls and final answer.
"""
from __future__ import annotations

import json

from ..broker import Cursor
from ..errors import AuthenticationFailed, ChannelAccessDenied, ModelCallFailed
from ..model_gateway import Message, ModelRequest, Role
from ..tool_gateway import ToolCall

_BULLISH_MARKERS = ("beats", "raise", "buyback")

DECISION_SYSTEM_PROMPT = (
    "You are the portfolio decision agent. Review the signal, call tools as "
    "needed, then reply with a single JSON order proposal."
)


def _direction_hint(headline: str) -> str:
    lowered = headline.lower()
    return "bullish" if any(m in lowered for m in _BULLISH_MARKERS) else "bearish"


class SignalRuntime:
    """Per-client research poller; publishes at most one signal per step."""

    def __init__(self, plane, client_id: str):
        self._plane = plane
        self.client_id = client_id
        self._token = plane.token_for(f"signal-{client_id}")
        self._topics = tuple(plane.scenario.research.get("topics", ("markets",)))
        self._min_strength = plane.scenario.signal_min_strength
        self._rogue = bool(plane.scenario.adversarial.get("signal_rogue_produce", False))
        self.rogue_denials = 0

    def step(self) -> bool:
        if self._rogue:
            self._attempt_rogue_produce()
        discoveries = []
        for topic in self._topics:
            result = self._plane.tools.call_tool(
                self._token, ToolCall("research-query", {"topic": topic})
            )
            if result.ok:
                discoveries.extend(result.body.get("discoveries", []))
        qualifying = [d for d in discoveries if d.get("strength", 0) >= self._min_strength]
        if not qualifying:
            return False
        best = max(qualifying, key=lambda d: d["strength"])
        if not best.get("relevance_symbols"):
            return False
        payload = {
            "symbol": best["relevance_symbols"][0],
            "direction_hint": _direction_hint(best["headline"]),
            "strength": best["strength"],
            "headline": best["headline"],
            "source_discovery": best["ref"],
        }
        self._plane.broker.produce(
            self._token,
            f"signals.{self.client_id}",
            json.dumps(payload, sort_keys=True).encode(),
        )
        return True

    def _attempt_rogue_produce(self) -> None:
        # out-of-scope write; must bounce off the channel ACL
        try:
            self._plane.broker.produce(
                self._token,
                f"orders.execute.{self.client_id}",
                b'{"symbol": "ACME", "side": "buy", "quantity": 1000000}',
            )
        except ChannelAccessDenied:
            self.rogue_denials += 1


class DecisionRuntime:
    """Drives the model loop for one signal: consume, tool turns, propose."""

    def __init__(self, plane):
        self._plane = plane
        self._token = plane.token_for("decision")
        self._turn_cap = plane.scenario.turn_cap
        self._max_turn_tokens = plane.scenario.max_turn_tokens
        self._cursors: dict[str, Cursor] = {}
        self._tool_schemas = tuple(plane.tools.list_tools(self._token))
        self.turn_limit_hits = 0

    def step(self, client_id: str) -> bool:
        channel = f"signals.{client_id}"
        cursor = self._cursors.get(channel, Cursor(channel))
        payloads, advanced = self._plane.broker.consume(self._token, cursor, 1)
        if not payloads:
            return False
        self._cursors[channel] = advanced
        try:
            signal = json.loads(payloads[0])
        except ValueError:
            return False

        messages = [
            Message(Role.SYSTEM, DECISION_SYSTEM_PROMPT),
            Message(Role.USER, json.dumps(signal, sort_keys=True)),
        ]
        final = None
        for _ in range(self._turn_cap):
            request = ModelRequest(
                messages=tuple(messages),
                tool_schemas=self._tool_schemas,
                max_turn_tokens=self._max_turn_tokens,
            )
            try:
                response = self._plane.models.complete(self._token, request)
            except (ModelCallFailed, AuthenticationFailed):
                return False
            if response.kind == "tool_call":
                call = response.content
                result = self._plane.tools.call_tool(self._token, call)
                messages.append(Message(Role.ASSISTANT, json.dumps(call.to_dict(), sort_keys=True)))
                messages.append(Message(Role.TOOL, json.dumps(result.body, sort_keys=True)))
                continue
            final = response.content
            break
        if final is None:
            self.turn_limit_hits += 1
            self._plane.writer.emit(
                actor="decision",
                kind="model_denied",
                body={"reason": "turn_limit", "turns": self._turn_cap},
            )
            return False
        try:
            proposal = json.loads(final)
        except ValueError:
            return False
        if not isinstance(proposal, dict):
            return False
        self._plane.broker.produce(
            self._token, "orders.proposed", json.dumps(proposal, sort_keys=True).encode()
        )
        return True


class ExecutionRuntime:
    """Turns routed orders into simulated-broker submissions and fills.

    A failed submission (for example a trade rate denial) leaves the cursor
    in place so the same order retries on a later step; nothing is skipped.
    """

    def __init__(self, plane):
        self._plane = plane
        self._token = plane.token_for("execution")
        self._cursors: dict[str, Cursor] = {}
        self._poll_cap = plane.scenario.poll_fills_after + 2
        self._rogue = bool(plane.scenario.adversarial.get("execution_rogue_tool", False))
        self.rogue_denials = 0

    def step(self, client_id: str) -> dict:
        counts = {"filled": 0, "rejected": 0, "deferred": 0}
        channel = f"orders.execute.{client_id}"
        if self._rogue:
            self._attempt_rogue_tool()
        while True:
            cursor = self._cursors.get(channel, Cursor(channel))
            payloads, advanced = self._plane.broker.consume(self._token, cursor, 1)
            if not payloads:
                break
            try:
                routed = json.loads(payloads[0])
            except ValueError:
                self._cursors[channel] = advanced
                continue
            submit = self._plane.tools.call_tool(
                self._token,
                ToolCall(
                    "submit-order",
                    {
                        "symbol": routed["symbol"],
                        "side": routed["side"],
                        "quantity": routed["quantity"],
                    },
                ),
            )
            if not submit.ok:
                # leave the cursor alone; the order stays queued for retry
                counts["deferred"] += 1
                break
            self._cursors[channel] = advanced
            order_id = submit.body["order_id"]
            status = submit.body["status"]
            self._plane.writer.emit(
                actor="execution",
                kind="order_submitted",
                body={
                    "order_ref": routed.get("order_ref"),
                    "broker_order_id": order_id,
                    "client_id": client_id,
                    "symbol": routed["symbol"],
                    "side": routed["side"],
                    "quantity": routed["quantity"],
                    "status": status,
                },
            )
            fill_price = None
            if status != "rejected":
                status, fill_price = self._poll_until_terminal(order_id)
            self._plane.writer.emit(
                actor="execution",
                kind="order_filled",
                body={
                    "order_ref": routed.get("order_ref"),
                    "broker_order_id": order_id,
                    "client_id": client_id,
                    "status": status,
                    "fill_price": fill_price,
                },
            )
            counts["filled" if status == "filled" else "rejected"] += 1
        return counts

    def _poll_until_terminal(self, order_id: str):
        status, fill_price = "pending", None
        for _ in range(self._poll_cap):
            result = self._plane.tools.call_tool(
                self._token, ToolCall("poll-order", {"order_id": order_id})
            )
            if not result.ok:
                break
            status = result.body["status"]
            fill_price = result.body["fill_price"]
            if status != "pending":
                break
        return status, fill_price

    def _attempt_rogue_tool(self) -> None:
        result = self._plane.tools.call_tool(
            self._token, ToolCall("research-query", {"topic": "markets"})
        )
        if not result.ok:
            self.rogue_denials += 1
