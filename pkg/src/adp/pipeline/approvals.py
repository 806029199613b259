"""Human approval queue for above-threshold orders.

Pending orders are pulled from the per-client approval channels with full
envelope metadata, so each decision can resume the order's original trace.
Approving re-publishes the routed payload to the client's execute channel
under the approver's credential; the ACL check is the same produce check
any caller would face.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass

from .. import binding
from ..broker import Cursor
from ..errors import AlreadyDecided, Unauthorized, UnknownOrder
from ..policy import Direction
from ..rng import derive_rng

DECISIONS = ("approved", "denied")


@dataclass
class PendingOrder:
    order_ref: str
    client_id: str
    payload: dict
    hop: object
    received_at: int

    def view(self) -> dict:
        return {
            "order_ref": self.order_ref,
            "client_id": self.client_id,
            "symbol": self.payload.get("symbol"),
            "side": self.payload.get("side"),
            "quantity": self.payload.get("quantity"),
            "recomputed_value": self.payload.get("recomputed_value"),
            "agent_estimated_value": self.payload.get("agent_estimated_value"),
            "rationale": self.payload.get("rationale"),
            "trace_id": self.hop.ctx.trace_id,
            "received_at": self.received_at,
        }


class ApprovalService:
    def __init__(self, plane):
        self._plane = plane
        self._token = plane.token_for("approver")
        self._cursors: dict[str, Cursor] = {}
        self._pending: dict[str, PendingOrder] = {}
        self._decided: dict[str, str] = {}  # order_ref -> decision
        self._rng = derive_rng(plane.scenario.seed, "approvals")
        self._cond = threading.Condition()
        self._version = 0
        self.counts = {"approved": 0, "denied": 0}

    # -- intake --------------------------------------------------------

    def refresh(self) -> int:
        """Drain the approval channels; returns how many orders arrived."""
        arrived = 0
        for client in self._plane.clients:
            channel = f"orders.pending_approval.{client}"
            while True:
                cursor = self._cursors.get(channel, Cursor(channel))
                envelopes, advanced = self._plane.broker.consume_full(
                    self._plane.internal_token, self._token, cursor, 1
                )
                if not envelopes:
                    break
                self._cursors[channel] = advanced
                resume = self._plane.tracer.current_hop()
                try:
                    payload = json.loads(envelopes[0].payload)
                except ValueError:
                    continue
                order = PendingOrder(
                    order_ref=payload["order_ref"],
                    client_id=client,
                    payload=payload,
                    hop=resume,
                    received_at=self._plane.clock.now(),
                )
                with self._cond:
                    self._pending[order.order_ref] = order
                    self._bump_locked()
                arrived += 1
        return arrived

    # -- queries -------------------------------------------------------

    def pending_views(self, scope=None) -> list[dict]:
        with self._cond:
            orders = list(self._pending.values())
        views = []
        for order in orders:
            if scope is not None and not self._can_view(scope, order.client_id):
                continue
            views.append(order.view())
        return views

    def version(self) -> int:
        with self._cond:
            return self._version

    def wait_change(self, seen_version: int, timeout: float) -> int:
        with self._cond:
            self._cond.wait_for(lambda: self._version != seen_version, timeout=timeout)
            return self._version

    # -- decisions -----------------------------------------------------

    def decide(self, token: str, order_ref: str, decision: str, note: str = "") -> dict:
        principal, scope = self._plane.identity.resolve(token)
        if decision not in DECISIONS:
            raise ValueError(f"decision must be one of {DECISIONS}")
        with self._cond:
            if order_ref in self._decided:
                raise AlreadyDecided(order_ref)
            order = self._pending.get(order_ref)
        if order is None:
            raise UnknownOrder(order_ref)
        if not self._can_decide(scope, order.client_id):
            raise Unauthorized(f"{principal.id} cannot decide orders for {order.client_id}")

        self._plane.tracer.set_hop(order.hop)
        self._plane.writer.emit(
            actor=principal.id,
            kind="approval_decision",
            body={
                "order_ref": order_ref,
                "client_id": order.client_id,
                "decision": decision,
                "note": note,
            },
        )
        if decision == "approved":
            with binding.bind_client(order.client_id):
                self._plane.broker.produce(
                    token,
                    f"orders.execute.{order.client_id}",
                    json.dumps(order.payload, sort_keys=True).encode(),
                )
        with self._cond:
            self._decided[order_ref] = decision
            self._pending.pop(order_ref, None)
            self._bump_locked()
        self.counts[decision] += 1
        return {"order_ref": order_ref, "decision": decision, "client_id": order.client_id}

    def auto_step(self, mode: str) -> None:
        if mode == "none":
            return
        with self._cond:
            refs = sorted(self._pending)
        for ref in refs:
            if mode == "approve_all":
                decision = "approved"
            elif mode == "deny_all":
                decision = "denied"
            else:
                decision = "approved" if self._rng.random() < 0.5 else "denied"
            self.decide(self._token, ref, decision, note=f"auto:{mode}")

    # -- internals -----------------------------------------------------

    def _can_view(self, scope, client_id: str) -> bool:
        verdict = self._plane.policy.check_channel_access(
            scope, f"orders.pending_approval.{client_id}", Direction.CONSUME
        )
        return verdict.allowed

    def _can_decide(self, scope, client_id: str) -> bool:
        verdict = self._plane.policy.check_channel_access(
            scope, f"orders.execute.{client_id}", Direction.PRODUCE
        )
        return verdict.allowed

    def _bump_locked(self) -> None:
        self._version += 1
        self._cond.notify_all()
