"""Scenario configuration.

A scenario is one JSON document holding the seed, the simulated world
setup, the demo policy set, backend wiring, and the adversarial toggles.
`demo_scenario` is the default two-client portfolio run; tests and the CLI
override individual fields.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigInvalid

APPROVAL_MODES = ("approve_all", "deny_all", "random", "none")
DECISION_SCRIPTS = (
    "standard",
    "runaway",
    "reserved_param",
    "cross_client_claim",
    "value_misreport",
    "malformed_final",
)

_DECISION_OUTPUT_SCHEMA = json.dumps(
    {
        "type": "object",
        "required": ["action", "symbol", "side", "quantity"],
        "properties": {
            "action": {"const": "propose_order"},
            "symbol": {"type": "string"},
            "side": {"enum": ["buy", "sell"]},
            "quantity": {"type": "integer", "minimum": 1},
        },
    }
)


def demo_scenario() -> dict:
    return {
        "seed": 42,
        "ticks": 20,
        "clients": {
            "c1": {
                "cash": 2_000_000,
                "positions": [
                    {"symbol": "ACME", "quantity": 40, "avg_cost": 9_800},
                    {"symbol": "GLOBEX", "quantity": 25, "avg_cost": 19_500},
                    {"symbol": "INITECH", "quantity": 60, "avg_cost": 5_100},
                ],
            },
            "c2": {
                "cash": 3_000_000,
                "positions": [
                    {"symbol": "ACME", "quantity": 30, "avg_cost": 10_200},
                    {"symbol": "GLOBEX", "quantity": 20, "avg_cost": 20_500},
                    {"symbol": "INITECH", "quantity": 80, "avg_cost": 4_900},
                ],
            },
        },
        "symbols": {
            "ACME": {"initial_price": 10_000},
            "GLOBEX": {"initial_price": 20_000},
            "INITECH": {"initial_price": 5_000},
        },
        "price_volatility_bp": 100,
        "poll_fills_after": 2,
        "autonomy_threshold": 100_000,
        "signal_min_strength": 6,
        "turn_cap": 10,
        "max_turn_tokens": 256,
        "approval_mode": "approve_all",
        "research": {"mode": "seeded", "topics": ["markets"]},
        "adversarial": {
            "research_injection": False,
            "signal_rogue_produce": False,
            "execution_rogue_tool": False,
            "transcript_append_attempt": False,
        },
        "decision": {
            "script": "standard",
            "value_bands": [[4, 50_000], [7, 100_000], [10, 150_000]],
            "claim_client": "c2",
        },
        "policies": {
            "rate": [
                {"id": "trade-limit", "action_class": "trade", "max_count": 10, "window": 10}
            ],
            "budgets": [{"id": "decision-budget", "max_tokens": 200_000}],
            "guardrails": [
                {
                    "id": "block-injection",
                    "direction": "input",
                    "kind": "pattern_deny",
                    "pattern_or_schema": "ignore previous instructions",
                    "action": "block",
                },
                {
                    "id": "decision-shape",
                    "direction": "output",
                    "kind": "schema_validate",
                    "pattern_or_schema": _DECISION_OUTPUT_SCHEMA,
                    "action": "block",
                },
            ],
            "redactions": [
                {
                    "id": "email",
                    "pattern": r"[a-zA-Z0-9_.+-]+@[a-zA-Z0-9-]+\.[a-zA-Z0-9.-]+",
                    "replacement": "[REDACTED-EMAIL]",
                }
            ],
        },
        "backends": [
            {"id": "alpha", "cost_per_1k_tokens": 2, "nominal_latency": 40, "provider_key_ref": "key-alpha"},
            {"id": "bravo", "cost_per_1k_tokens": 5, "nominal_latency": 25, "provider_key_ref": "key-bravo"},
        ],
        "routing": {"strategy": "min_cost", "allow_list": ["alpha", "bravo"]},
    }


@dataclass(frozen=True)
class Scenario:
    seed: int
    ticks: int
    clients: dict
    symbols: dict
    price_volatility_bp: int
    poll_fills_after: int
    autonomy_threshold: int
    signal_min_strength: int
    turn_cap: int
    max_turn_tokens: int
    approval_mode: str
    research: dict
    adversarial: dict
    decision: dict
    policies: dict
    backends: list
    routing: dict
    raw: dict = field(repr=False, default_factory=dict)

    @staticmethod
    def from_dict(config: dict) -> "Scenario":
        merged = copy.deepcopy(demo_scenario())
        for key, value in config.items():
            if key not in merged:
                raise ConfigInvalid(f"unknown scenario key: {key}")
            if isinstance(merged[key], dict) and isinstance(value, dict) and key != "clients":
                merged[key].update(copy.deepcopy(value))
            else:
                merged[key] = copy.deepcopy(value)
        scenario = Scenario(
            seed=int(merged["seed"]),
            ticks=int(merged["ticks"]),
            clients=merged["clients"],
            symbols=merged["symbols"],
            price_volatility_bp=int(merged["price_volatility_bp"]),
            poll_fills_after=int(merged["poll_fills_after"]),
            autonomy_threshold=int(merged["autonomy_threshold"]),
            signal_min_strength=int(merged["signal_min_strength"]),
            turn_cap=int(merged["turn_cap"]),
            max_turn_tokens=int(merged["max_turn_tokens"]),
            approval_mode=merged["approval_mode"],
            research=merged["research"],
            adversarial=merged["adversarial"],
            decision=merged["decision"],
            policies=merged["policies"],
            backends=merged["backends"],
            routing=merged["routing"],
            raw=merged,
        )
        scenario.validate()
        return scenario

    @staticmethod
    def from_file(path: str | Path) -> "Scenario":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                config = json.load(fh)
        except FileNotFoundError:
            raise ConfigInvalid(f"scenario file not found: {path}")
        except ValueError as exc:
            raise ConfigInvalid(f"scenario file {path} is not valid JSON: {exc}")
        if not isinstance(config, dict):
            raise ConfigInvalid(f"scenario file {path} must hold a JSON object")
        return Scenario.from_dict(config)

    def validate(self) -> None:
        if self.ticks < 0:
            raise ConfigInvalid("ticks must be >= 0")
        if self.poll_fills_after < 1:
            raise ConfigInvalid("poll_fills_after must be >= 1")
        if self.autonomy_threshold < 0:
            raise ConfigInvalid("autonomy_threshold must be >= 0")
        if self.turn_cap < 1:
            raise ConfigInvalid("turn_cap must be >= 1")
        if self.approval_mode not in APPROVAL_MODES:
            raise ConfigInvalid(f"approval_mode must be one of {APPROVAL_MODES}")
        if self.decision.get("script") not in DECISION_SCRIPTS:
            raise ConfigInvalid(f"decision.script must be one of {DECISION_SCRIPTS}")
        if not self.clients:
            raise ConfigInvalid("at least one client required")
        if not self.symbols:
            raise ConfigInvalid("at least one symbol required")
        if not self.backends:
            raise ConfigInvalid("at least one backend required")
        bands = self.decision.get("value_bands")
        if not bands or any(len(b) != 2 for b in bands):
            raise ConfigInvalid("decision.value_bands must be [max_strength, value] pairs")

    def with_overrides(self, seed: int | None = None, ticks: int | None = None) -> "Scenario":
        config = copy.deepcopy(self.raw)
        if seed is not None:
            config["seed"] = seed
        if ticks is not None:
            config["ticks"] = ticks
        return Scenario.from_dict(config)
