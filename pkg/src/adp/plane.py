"""Data plane assembly.

Builds every component from one scenario: clock, tracer, ledger, identity,
policies, broker, world, both gateways; then creates the demo channels,
registers the world tools and scripted backends, and issues the demo
credentials.  Setup leaves only credential events in the ledger.
"""
from __future__ import annotations

from pathlib import Path

from .backends import build_decision_handler
from .broker import Broker
from .clock import LogicalClock
from .identity import AclEntry, Credential, IdentityService, Principal, PrincipalKind, Scope
from .ledger import Ledger, TranscriptWriter
from .model_gateway import BackendDescriptor, ModelGateway, RoutingPolicy, RoutingStrategy
from .policy import ActionClass, Direction, PolicyEngine, ThresholdPolicy
from .scenario import Scenario
from .tool_gateway import ToolDescriptor, ToolGateway
from .tracing import TraceManager
from .world import World


def _world_tools(world: World) -> list[tuple[ToolDescriptor, callable]]:
    no_args = {"type": "object", "properties": {}, "additionalProperties": False}

    def research_query(client_id, args, ctx):
        return {"discoveries": [d.to_dict() for d in world.research_query(args["topic"])]}

    def get_positions(client_id, args, ctx):
        return {
            "positions": [
                {"symbol": p.symbol, "quantity": p.quantity, "avg_cost": p.avg_cost}
                for p in world.get_positions(client_id)
            ]
        }

    def get_buying_power(client_id, args, ctx):
        return {"buying_power": world.get_buying_power(client_id)}

    def get_price_history(client_id, args, ctx):
        points = world.get_price_history(args["symbol"], args["window"])
        return {
            "symbol": args["symbol"],
            "points": [{"t": p.logical_time, "price": p.price} for p in points],
        }

    def get_signal_detail(client_id, args, ctx):
        return world.get_signal_detail(args["ref"]).to_dict()

    def submit_order(client_id, args, ctx):
        order_id = world.submit_order(client_id, args["symbol"], args["side"], args["quantity"])
        snapshot = world.order_snapshot(client_id, order_id)
        return {"order_id": order_id, "status": snapshot.status.value}

    def poll_order(client_id, args, ctx):
        snapshot = world.poll_order(client_id, args["order_id"])
        return {
            "order_id": snapshot.order_id,
            "status": snapshot.status.value,
            "fill_price": snapshot.fill_price,
            "polls_remaining": snapshot.polls_remaining,
        }

    return [
        (
            ToolDescriptor(
                name="research-query",
                params_schema={
                    "type": "object",
                    "properties": {"topic": {"type": "string"}},
                    "required": ["topic"],
                    "additionalProperties": False,
                },
                scoped=False,
                action_class=ActionClass.TOOL_CALL,
                upstream_id="world",
            ),
            research_query,
        ),
        (
            ToolDescriptor(
                name="get-positions",
                params_schema=no_args,
                scoped=True,
                action_class=ActionClass.TOOL_CALL,
                upstream_id="world",
            ),
            get_positions,
        ),
        (
            ToolDescriptor(
                name="get-buying-power",
                params_schema=no_args,
                scoped=True,
                action_class=ActionClass.TOOL_CALL,
                upstream_id="world",
            ),
            get_buying_power,
        ),
        (
            ToolDescriptor(
                name="get-price-history",
                params_schema={
                    "type": "object",
                    "properties": {
                        "symbol": {"type": "string"},
                        "window": {"type": "integer", "minimum": 1, "maximum": 100},
                    },
                    "required": ["symbol", "window"],
                    "additionalProperties": False,
                },
                scoped=False,
                action_class=ActionClass.TOOL_CALL,
                upstream_id="world",
            ),
            get_price_history,
        ),
        (
            ToolDescriptor(
                name="get-signal-detail",
                params_schema={
                    "type": "object",
                    "properties": {"ref": {"type": "string"}},
                    "required": ["ref"],
                    "additionalProperties": False,
                },
                scoped=False,
                action_class=ActionClass.TOOL_CALL,
                upstream_id="world",
            ),
            get_signal_detail,
        ),
        (
            ToolDescriptor(
                name="submit-order",
                params_schema={
                    "type": "object",
                    "properties": {
                        "symbol": {"type": "string"},
                        "side": {"enum": ["buy", "sell"]},
                        "quantity": {"type": "integer", "minimum": 1},
                    },
                    "required": ["symbol", "side", "quantity"],
                    "additionalProperties": False,
                },
                scoped=True,
                action_class=ActionClass.TRADE,
                upstream_id="world",
            ),
            submit_order,
        ),
        (
            ToolDescriptor(
                name="poll-order",
                params_schema={
                    "type": "object",
                    "properties": {"order_id": {"type": "string"}},
                    "required": ["order_id"],
                    "additionalProperties": False,
                },
                scoped=True,
                action_class=ActionClass.TOOL_CALL,
                upstream_id="world",
            ),
            poll_order,
        ),
    ]


class DataPlane:
    def __init__(self, scenario: Scenario, journal_path: str | Path | None = None):
        self.scenario = scenario
        self.clients = sorted(scenario.clients)
        self.threshold = ThresholdPolicy(autonomy_threshold=scenario.autonomy_threshold)

        self.clock = LogicalClock()
        self.tracer = TraceManager(scenario.seed)
        self.ledger = Ledger(self.clock, journal_path)
        self.writer = TranscriptWriter(self.ledger, self.ledger.internal_token, self.tracer)
        self.identity = IdentityService(self.clock, seed=scenario.seed, writer=self.writer)
        self.policy = PolicyEngine()
        self.policy.load_config(scenario.policies)
        self.broker = Broker(
            self.identity, self.policy, self.writer, self.clock,
            internal_token=self.ledger.internal_token,
        )

        research = dict(scenario.research)
        research["injection"] = bool(scenario.adversarial.get("research_injection", False))
        self.world = World(
            seed=scenario.seed,
            clients=scenario.clients,
            symbols=scenario.symbols,
            price_volatility_bp=scenario.price_volatility_bp,
            poll_fills_after=scenario.poll_fills_after,
            research=research,
        )

        self.tools = ToolGateway(self.identity, self.policy, self.writer, self.clock)
        self.models = ModelGateway(
            self.identity, self.policy, self.writer, self.clock, seed=scenario.seed
        )

        self.credentials: dict[str, Credential] = {}
        self._setup_admin()
        self._setup_channels()
        self._setup_tools()
        self._setup_backends()
        self._setup_agents()

    # -- properties ----------------------------------------------------

    @property
    def internal_token(self):
        return self.ledger.internal_token

    @property
    def admin_token(self) -> str:
        return self.credentials["admin"].token

    def token_for(self, principal_id: str) -> str:
        return self.credentials[principal_id].token

    def agent_tokens(self) -> dict[str, str]:
        """Non-admin demo credentials, keyed by principal id."""
        return {
            pid: cred.token for pid, cred in sorted(self.credentials.items()) if pid != "admin"
        }

    def begin_client_trace(self, client_id: str):
        """Root a new trace for one client's pipeline chain and label it so
        transcript grants can select it by client."""
        ctx = self.tracer.begin_root()
        self.writer.label_trace(ctx.trace_id, f"client.{client_id}")
        return ctx

    def close(self) -> None:
        self.ledger.close()

    # -- setup ---------------------------------------------------------

    def _setup_admin(self) -> None:
        admin = Principal(id="admin", kind=PrincipalKind.SERVICE, display_name="Plane admin")
        self.identity.register_principal(admin)
        self.identity.grant_admin("admin")
        self.credentials["admin"] = self.identity.issue_credential(admin, Scope())

    def _setup_channels(self) -> None:
        names = ["orders.proposed"]
        for client in self.clients:
            names += [
                f"signals.{client}",
                f"orders.execute.{client}",
                f"orders.pending_approval.{client}",
            ]
        for name in names:
            self.broker.create_channel(self.admin_token, name)

    def _setup_tools(self) -> None:
        for descriptor, handler in _world_tools(self.world):
            self.tools.register_upstream(self.admin_token, descriptor, handler)

    def _setup_backends(self) -> None:
        handler = build_decision_handler(
            self.scenario.decision.get("script", "standard"), self.scenario.decision
        )
        for entry in self.scenario.backends:
            descriptor = BackendDescriptor(
                id=entry["id"],
                cost_per_1k_tokens=int(entry["cost_per_1k_tokens"]),
                nominal_latency=int(entry["nominal_latency"]),
                provider_key_ref=entry["provider_key_ref"],
            )
            self.models.register_backend(self.admin_token, descriptor, handler)
        routing = self.scenario.routing
        self.models.load_routing(
            self.admin_token,
            RoutingPolicy(
                strategy=RoutingStrategy(routing["strategy"]),
                allow_list=frozenset(routing["allow_list"]),
            ),
        )

    def _setup_agents(self) -> None:
        all_clients = frozenset(self.clients)
        for client in self.clients:
            principal = Principal(
                id=f"signal-{client}",
                kind=PrincipalKind.AGENT,
                display_name=f"Signal agent ({client})",
            )
            self.identity.register_principal(principal)
            self.credentials[principal.id] = self.identity.issue_credential(
                principal,
                Scope(
                    client_ids=frozenset({client}),
                    channel_acls=(AclEntry("signals.{client_id}", Direction.PRODUCE),),
                    tool_acls=frozenset({"research-query", "get-price-history"}),
                ),
            )

        decision = Principal(id="decision", kind=PrincipalKind.AGENT, display_name="Decision agent")
        self.identity.register_principal(decision)
        self.credentials["decision"] = self.identity.issue_credential(
            decision,
            Scope(
                client_ids=all_clients,
                channel_acls=(
                    AclEntry("signals.*", Direction.CONSUME),
                    AclEntry("orders.proposed", Direction.PRODUCE),
                ),
                tool_acls=frozenset(
                    {"get-positions", "get-buying-power", "get-price-history", "get-signal-detail"}
                ),
                budgets_ref="decision-budget",
            ),
        )

        execution = Principal(
            id="execution", kind=PrincipalKind.AGENT, display_name="Execution agent"
        )
        self.identity.register_principal(execution)
        self.credentials["execution"] = self.identity.issue_credential(
            execution,
            Scope(
                client_ids=all_clients,
                channel_acls=(AclEntry("orders.execute.*", Direction.CONSUME),),
                tool_acls=frozenset({"submit-order", "poll-order"}),
                rate_refs=("trade-limit",),
            ),
        )

        approver = Principal(id="approver", kind=PrincipalKind.HUMAN, display_name="Desk approver")
        self.identity.register_principal(approver)
        self.credentials["approver"] = self.identity.issue_credential(
            approver,
            Scope(
                client_ids=all_clients,
                channel_acls=(
                    AclEntry("orders.pending_approval.*", Direction.CONSUME),
                    AclEntry("orders.execute.*", Direction.PRODUCE),
                ),
                transcript_grants=frozenset({"client.*"}),
            ),
        )

        router = Principal(id="order-router", kind=PrincipalKind.SERVICE, display_name="Order router")
        self.identity.register_principal(router)
        self.credentials["order-router"] = self.identity.issue_credential(
            router,
            Scope(
                client_ids=all_clients,
                channel_acls=(
                    AclEntry("orders.proposed", Direction.CONSUME),
                    AclEntry("orders.execute.*", Direction.PRODUCE),
                    AclEntry("orders.pending_approval.*", Direction.PRODUCE),
                ),
            ),
        )
