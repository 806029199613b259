"""Shared fixtures: plane builders, scenario presets, a live HTTP server.

The stock TestClient buffers whole responses, so anything exercising the
SSE stream goes through a real uvicorn server on an ephemeral port.
"""
from __future__ import annotations

import contextlib
import socket
import threading
import time

import pytest
import uvicorn

from adp.pipeline import PipelineRunner
from adp.plane import DataPlane
from adp.scenario import Scenario


def build_plane(overrides: dict | None = None, journal_path=None):
    scenario = Scenario.from_dict(overrides or {})
    plane = DataPlane(scenario, journal_path)
    return plane, PipelineRunner(plane)


def flat_market(**extra) -> dict:
    """Deterministic single-client scenario: frozen prices, one discovery
    per tick with a fixed strength cycle, generous rate limits."""
    config = {
        "seed": 11,
        "ticks": 3,
        "price_volatility_bp": 0,
        "clients": {
            "c1": {
                "cash": 10_000_000,
                "positions": [
                    {"symbol": "ACME", "quantity": 500, "avg_cost": 9_800},
                    {"symbol": "GLOBEX", "quantity": 500, "avg_cost": 19_500},
                    {"symbol": "INITECH", "quantity": 500, "avg_cost": 5_100},
                ],
            }
        },
        "signal_min_strength": 1,
        "research": {"mode": "always", "topics": ["markets"], "strength_cycle": [3, 6, 9]},
        "policies": {
            "rate": [
                {"id": "trade-limit", "action_class": "trade", "max_count": 1000, "window": 1000}
            ],
            "budgets": [{"id": "decision-budget", "max_tokens": 10_000_000}],
            "guardrails": [
                {
                    "id": "block-injection",
                    "direction": "input",
                    "kind": "pattern_deny",
                    "pattern_or_schema": "ignore previous instructions",
                    "action": "block",
                }
            ],
            "redactions": [],
        },
    }
    config.update(extra)
    return config


@pytest.fixture
def demo_plane():
    plane, runner = build_plane()
    yield plane, runner
    plane.close()


@contextlib.contextmanager
def live_server(app):
    probe = socket.socket()
    probe.bind(("127.0.0.1", 0))
    port = probe.getsockname()[1]
    probe.close()
    config = uvicorn.Config(app, host="127.0.0.1", port=port, log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 10
    while not server.started:
        if time.monotonic() > deadline:
            raise RuntimeError("server did not start")
        time.sleep(0.02)
    try:
        yield f"http://127.0.0.1:{port}"
    finally:
        server.should_exit = True
        thread.join(timeout=10)
