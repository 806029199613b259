"""Tick loop for the portfolio pipeline.

One tick moves the world forward, then runs each stage in a fixed order:
signal agents, decision agent, order router, approvals, execution agents.
Every stage starts from a clean ambient hop so traces chain only through
envelopes, and each client stage runs under that client's binding.
"""
from __future__ import annotations

from collections import Counter

from .. import binding
from ..errors import InvalidInternalToken
from ..ledger import TranscriptRecord
from .agents import DecisionRuntime, ExecutionRuntime, SignalRuntime
from .approvals import ApprovalService
from .routing import OrderRouter


class PipelineRunner:
    def __init__(self, plane, approvals: ApprovalService | None = None):
        self.plane = plane
        self.signals = {c: SignalRuntime(plane, c) for c in plane.clients}
        self.decision = DecisionRuntime(plane)
        self.execution = ExecutionRuntime(plane)
        self.router = OrderRouter(plane)
        self.approvals = approvals if approvals is not None else ApprovalService(plane)
        self._signal_count = 0
        self._proposal_count = 0
        self._fills = Counter()
        self.append_attempts_blocked = 0
        self.ticks_run = 0

    def run_tick(self) -> None:
        plane = self.plane
        plane.clock.advance()
        plane.world.advance_tick()

        if plane.scenario.adversarial.get("transcript_append_attempt"):
            self._attempt_direct_append()

        for client in plane.clients:
            plane.tracer.set_hop(None)
            plane.begin_client_trace(client)
            with binding.bind_client(client):
                if self.signals[client].step():
                    self._signal_count += 1

        for client in plane.clients:
            plane.tracer.set_hop(None)
            with binding.bind_client(client):
                if self.decision.step(client):
                    self._proposal_count += 1

        plane.tracer.set_hop(None)
        self.router.step()

        plane.tracer.set_hop(None)
        self.approvals.refresh()
        self.approvals.auto_step(plane.scenario.approval_mode)

        for client in plane.clients:
            plane.tracer.set_hop(None)
            with binding.bind_client(client):
                self._fills.update(self.execution.step(client))

        self.ticks_run += 1

    def run(self, ticks: int | None = None) -> dict:
        if ticks is None:
            ticks = self.plane.scenario.ticks
        for _ in range(ticks):
            self.run_tick()
        return self.summary()

    def summary(self) -> dict:
        kinds = Counter(
            sealed.record.event_kind for sealed in self.plane.ledger.records()
        )
        denied_channel_ops = sum(
            1
            for sealed in self.plane.ledger.records()
            if sealed.record.event_kind in ("produce", "consume")
            and sealed.record.body.get("outcome") == "denied"
        )
        return {
            "ticks": self.ticks_run,
            "clients": list(self.plane.clients),
            "signals": self._signal_count,
            "orders_proposed": self._proposal_count,
            "routed": dict(self.router.counts),
            "approvals": dict(self.approvals.counts),
            "fills": {
                "filled": self._fills.get("filled", 0),
                "rejected": self._fills.get("rejected", 0),
                "deferred": self._fills.get("deferred", 0),
            },
            "denials": {
                "tool": kinds.get("tool_denied", 0),
                "model": kinds.get("model_denied", 0),
                "channel": denied_channel_ops,
                "ledger_append": self.append_attempts_blocked,
            },
            "turn_limit_hits": self.decision.turn_limit_hits,
            "records": len(self.plane.ledger),
            "final_hash": (
                self.plane.ledger.hash_sequence()[-1] if len(self.plane.ledger) else None
            ),
        }

    def _attempt_direct_append(self) -> None:
        """Agents hold string tokens, not the append capability; prove it."""
        plane = self.plane
        forged = TranscriptRecord(
            seq=0,
            logical_time=plane.clock.now(),
            trace=plane.tracer.new_root_context(),
            parent_span=None,
            actor_principal="decision",
            event_kind="order_filled",
            body={"order_ref": "ord-0", "status": "filled", "fill_price": 1},
        )
        try:
            plane.ledger.append(plane.token_for("decision"), forged)
        except InvalidInternalToken:
            self.append_attempts_blocked += 1
