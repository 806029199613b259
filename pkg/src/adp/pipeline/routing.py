"""Threshold routing over proposed orders.

The router is infrastructure, not an agent: it reads envelope metadata the
producer cannot see or forge, recomputes order value from the reference
price, and decides auto-execution versus human approval.  Anything the
payload claims about client identity or value is treated as untrusted.
"""
from __future__ import annotations

import json

from .. import binding
from ..broker import Cursor
from ..errors import UnknownSymbol


class OrderRouter:
    def __init__(self, plane):
        self._plane = plane
        self._token = plane.token_for("order-router")
        self._cursor = Cursor("orders.proposed")
        self._next_ref = 1
        self.counts = {"auto": 0, "pending": 0, "discarded": 0}

    def step(self) -> list[dict]:
        """Route every proposed order currently queued; returns route bodies."""
        routed = []
        while True:
            envelopes, advanced = self._plane.broker.consume_full(
                self._plane.internal_token, self._token, self._cursor, 1
            )
            if not envelopes:
                break
            self._cursor = advanced
            routed.append(self._route_one(envelopes[0]))
        return routed

    def _route_one(self, envelope) -> dict:
        meta = envelope.meta
        client_id = meta.client_binding
        try:
            proposal = json.loads(envelope.payload)
            if not isinstance(proposal, dict):
                raise ValueError("not an object")
        except ValueError:
            return self._discard(meta, None, "malformed_payload", {})
        if client_id is None:
            return self._discard(meta, proposal, "no_client_binding", {})

        symbol = proposal.get("symbol")
        side = proposal.get("side")
        quantity = proposal.get("quantity")
        if side not in ("buy", "sell"):
            return self._discard(meta, proposal, "invalid_side", {"client_id": client_id})
        if not isinstance(quantity, int) or isinstance(quantity, bool) or quantity < 1:
            return self._discard(meta, proposal, "invalid_quantity", {"client_id": client_id})
        try:
            reference_price = self._plane.world.reference_price(symbol)
        except (UnknownSymbol, TypeError):
            return self._discard(meta, proposal, "unknown_symbol", {"client_id": client_id})

        # the payload's own estimate is recorded but never trusted
        recomputed_value = quantity * reference_price
        threshold = self._plane.threshold.autonomy_threshold
        verdict = "auto_execute" if recomputed_value < threshold else "pending_approval"
        order_ref = f"ord-{self._next_ref}"
        self._next_ref += 1

        body = {
            "order_ref": order_ref,
            "client_id": client_id,
            "producer": meta.producer_principal,
            "symbol": symbol,
            "side": side,
            "quantity": quantity,
            "agent_estimated_value": proposal.get("agent_estimated_value"),
            "recomputed_value": recomputed_value,
            "threshold": threshold,
            "verdict": verdict,
        }
        self._plane.writer.emit(actor="order-router", kind="route_decision", body=body)

        destination = (
            f"orders.execute.{client_id}"
            if verdict == "auto_execute"
            else f"orders.pending_approval.{client_id}"
        )
        routed_payload = {
            "order_ref": order_ref,
            "client_id": client_id,
            "symbol": symbol,
            "side": side,
            "quantity": quantity,
            "agent_estimated_value": proposal.get("agent_estimated_value"),
            "recomputed_value": recomputed_value,
            "threshold": threshold,
            "verdict": verdict,
            "rationale": proposal.get("rationale"),
        }
        with binding.bind_client(client_id):
            self._plane.broker.produce(
                self._token, destination, json.dumps(routed_payload, sort_keys=True).encode()
            )
        self.counts["auto" if verdict == "auto_execute" else "pending"] += 1
        return body

    def _discard(self, meta, proposal, reason: str, extra: dict) -> dict:
        body = {
            "order_ref": None,
            "producer": meta.producer_principal,
            "verdict": "discarded",
            "reason": reason,
            "proposal": proposal,
        }
        body.update(extra)
        self._plane.writer.emit(actor="order-router", kind="route_decision", body=body)
        self.counts["discarded"] += 1
        return body
