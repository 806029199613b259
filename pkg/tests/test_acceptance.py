"""Acceptance suite: twelve end-to-end guarantees, one scorecard line each.

Every expected value here comes from an independent oracle (brute force,
closed-form arithmetic over the scenario config, or a second
implementation), never from reading the code under test's own output back.
Each test prints PASS/FAIL on the unbuffered terminal so a full run reads
as a twelve-line scorecard.
"""
import contextlib
import json
import random
import threading

import pytest
from fastapi.testclient import TestClient

from adp import binding
from adp.errors import ChannelAccessDenied, ModelCallFailed
from adp.http_api import build_app
from adp.identity import Scope
from adp.ledger import verify_journal
from adp.policy import ActionClass, Direction, PolicyEngine, RateLimitPolicy
from adp.tool_gateway import ToolCall
from adp.tracing import format_traceparent, parse_traceparent
from conftest import build_plane, flat_market

from test_ledger import read_frames, write_frames
from test_model_gateway import Stack as ModelStack
from test_model_gateway import request as model_request
from test_model_gateway import text_handler
from test_policy import RateOracle, oracle_pattern_matches

THRESHOLD = 100_000  # demo autonomy threshold, minor units


@contextlib.contextmanager
def report(capsys, number, description):
    try:
        yield
    except BaseException:
        with capsys.disabled():
            print(f"FAIL criterion {number}: {description}")
        raise
    with capsys.disabled():
        print(f"PASS criterion {number}: {description}")


def records_of(plane, kind):
    return [s.record for s in plane.ledger.records() if s.record.event_kind == kind]


def lane_payloads(plane, channel):
    """Decode every payload on a channel through the admin inspect surface."""
    out = []
    offset = 0
    while True:
        try:
            envelope = plane.broker.inspect_envelope(plane.admin_token, channel, offset)
        except Exception:
            break
        out.append((json.loads(envelope.payload), envelope.meta))
        offset += 1
    return out


# -- criterion 1 -----------------------------------------------------------


def test_criterion_01_threshold_split(capsys):
    """Flat prices make order values exact: the strength cycle [3, 6, 9]
    produces $500, $1,000, and $1,500 orders against a $1,000 threshold."""
    with report(capsys, 1, "split-threshold routing: $500 auto, $1,000 boundary pending, $1,500 pending"):
        plane, runner = build_plane(flat_market())
        runner.run()
        routes = {r.body["order_ref"]: r.body for r in records_of(plane, "route_decision")}
        assert len(routes) == 3

        # tick 1: GLOBEX @ 20_000 x 5 = exactly the threshold; strict < keeps it manual
        assert routes["ord-1"]["recomputed_value"] == THRESHOLD
        assert routes["ord-1"]["verdict"] == "pending_approval"
        # tick 2: INITECH @ 5_000 x 30 = 150_000
        assert routes["ord-2"]["recomputed_value"] == 150_000
        assert routes["ord-2"]["verdict"] == "pending_approval"
        # tick 3: ACME @ 10_000 x 5 = 50_000
        assert routes["ord-3"]["recomputed_value"] == 50_000
        assert routes["ord-3"]["verdict"] == "auto_execute"

        pending_lane = lane_payloads(plane, "orders.pending_approval.c1")
        assert [p["order_ref"] for p, _ in pending_lane] == ["ord-1", "ord-2"]
        execute_lane = lane_payloads(plane, "orders.execute.c1")
        assert [p["order_ref"] for p, _ in execute_lane] == ["ord-1", "ord-2", "ord-3"]
        producers = [meta.producer_principal for _, meta in execute_lane]
        assert producers == ["approver", "approver", "order-router"]
        plane.close()


# -- criterion 2 -----------------------------------------------------------


def test_criterion_02_estimate_mutation_invariance(capsys):
    """1,000 proposals in adversarial pairs: same order, wildly different
    self-reported value.  The verdict must track quantity x reference price."""
    with report(capsys, 2, "1,000 randomized proposals: mutated self-estimates never change routing"):
        plane, runner = build_plane({"price_volatility_bp": 0})
        prices = {"ACME": 10_000, "GLOBEX": 20_000, "INITECH": 5_000}
        token = plane.token_for("decision")
        rng = random.Random(20260823)
        lane_offsets = {}

        for _ in range(500):
            client = rng.choice(["c1", "c2"])
            symbol = rng.choice(sorted(prices))
            side = rng.choice(["buy", "sell"])
            quantity = rng.randint(1, 15)
            true_value = quantity * prices[symbol]
            expected = "auto_execute" if true_value < THRESHOLD else "pending_approval"
            # one estimate pleads small, one pleads huge; sometimes absent
            estimates = rng.sample(
                [rng.randint(0, THRESHOLD - 1), rng.randint(THRESHOLD, 10**9), None], 2
            )
            for estimate in estimates:
                proposal = {"symbol": symbol, "side": side, "quantity": quantity}
                if estimate is not None:
                    proposal["agent_estimated_value"] = estimate
                with binding.bind_client(client):
                    plane.broker.produce(token, "orders.proposed", json.dumps(proposal).encode())
            routed = runner.router.step()
            assert len(routed) == 2
            for body in routed:
                assert body["verdict"] == expected
                assert body["client_id"] == client
                assert body["recomputed_value"] == true_value
                lane = (
                    f"orders.execute.{client}"
                    if expected == "auto_execute"
                    else f"orders.pending_approval.{client}"
                )
                offset = lane_offsets.get(lane, 0)
                envelope = plane.broker.inspect_envelope(plane.admin_token, lane, offset)
                assert json.loads(envelope.payload)["order_ref"] == body["order_ref"]
                lane_offsets[lane] = offset + 1
        assert runner.router.counts["auto"] + runner.router.counts["pending"] == 1000
        plane.close()


# -- criterion 3 -----------------------------------------------------------


def test_criterion_03_cross_client_isolation_fuzz(capsys):
    """12,000 fuzzed tool calls from the pipeline credentials, including
    reserved-parameter injection and foreign bindings.  The upstream
    observer sees every invocation; none may carry another client's scope,
    and every scoped payload must equal that client's world state."""
    with report(capsys, 3, "12,000-call fuzz: zero cross-client payloads or scope injections"):
        plane, _ = build_plane({"price_volatility_bp": 0})
        rng = random.Random(97)
        observed = []
        plane.tools.set_upstream_observer(
            lambda tool, client, args: observed.append((tool, client, dict(args)))
        )

        scoped_tools = {"get-positions", "get-buying-power", "submit-order", "poll-order"}
        singleton_client = {"signal-c1": "c1", "signal-c2": "c2"}
        tools_pool = [
            "research-query",
            "get-positions",
            "get-buying-power",
            "get-price-history",
            "get-signal-detail",
            "submit-order",
            "poll-order",
            "ghost-tool",
        ]

        def fuzz_args(tool):
            valid = {
                "research-query": {"topic": "markets"},
                "get-positions": {},
                "get-buying-power": {},
                "get-price-history": {"symbol": rng.choice(["ACME", "GLOBEX"]), "window": rng.randint(1, 5)},
                "get-signal-detail": {"ref": f"disc-{rng.randint(0, 3)}-markets-0"},
                "submit-order": {
                    "symbol": rng.choice(["ACME", "INITECH"]),
                    "side": rng.choice(["buy", "sell"]),
                    "quantity": rng.randint(1, 3),
                },
                "poll-order": {"order_id": f"bo-{rng.randint(1, 30)}"},
                "ghost-tool": {},
            }[tool]
            roll = rng.random()
            if roll < 0.25:
                valid = dict(valid)
                valid["client_id"] = rng.choice(["c1", "c2", "admin"])  # reserved
            elif roll < 0.40:
                valid = dict(valid)
                valid[rng.choice(["window", "quantity", "bogus"])] = rng.choice(
                    ["x", -3, 10**9, None]
                )
            return valid

        total = 0
        for i in range(12_000):
            principal = rng.choice(["decision", "decision", "execution", "execution", "signal-c1", "signal-c2"])
            token = plane.token_for(principal)
            bound = rng.choice([None, "c1", "c2", "c3"])
            tool = rng.choice(tools_pool)
            args = fuzz_args(tool)

            if principal in singleton_client:
                expected_client = singleton_client[principal]
            elif bound in ("c1", "c2"):
                expected_client = bound
            else:
                expected_client = None  # scoped calls must be denied pre-upstream

            before = len(observed)
            context = binding.bind_client(bound) if bound else contextlib.nullcontext()
            with context:
                result = plane.tools.call_tool(token, ToolCall(tool, args))
            total += 1

            for seen_tool, seen_client, seen_args in observed[before:]:
                assert "client_id" not in seen_args  # reserved param never reaches upstream
                if seen_tool in scoped_tools:
                    assert seen_client == expected_client
                    assert seen_client is not None
                else:
                    assert seen_client is None

            if result.ok and tool == "get-positions":
                expected_positions = [
                    {"symbol": p.symbol, "quantity": p.quantity, "avg_cost": p.avg_cost}
                    for p in plane.world.get_positions(expected_client)
                ]
                assert result.body == {"positions": expected_positions}
            if result.ok and tool == "get-buying-power":
                assert result.body == {
                    "buying_power": plane.world.get_buying_power(expected_client)
                }
            if i % 400 == 0:
                plane.clock.advance()  # let trade-rate windows roll over

        assert total == 12_000
        assert total >= 10_000
        # the two demo clients hold different books, so any leak would have
        # failed the equality checks above; spot-check they really differ
        assert plane.world.get_positions("c1") != plane.world.get_positions("c2")
        plane.close()


# -- criterion 4 -----------------------------------------------------------

# hand-declared channel matrix for the demo credentials (two clients)
DECLARED_ALLOWED = {
    ("signal-c1", Direction.PRODUCE): {"signals.c1"},
    ("signal-c1", Direction.CONSUME): set(),
    ("signal-c2", Direction.PRODUCE): {"signals.c2"},
    ("signal-c2", Direction.CONSUME): set(),
    ("decision", Direction.PRODUCE): {"orders.proposed"},
    ("decision", Direction.CONSUME): {"signals.c1", "signals.c2"},
    ("execution", Direction.PRODUCE): set(),
    ("execution", Direction.CONSUME): {"orders.execute.c1", "orders.execute.c2"},
    ("approver", Direction.PRODUCE): {"orders.execute.c1", "orders.execute.c2"},
    ("approver", Direction.CONSUME): {"orders.pending_approval.c1", "orders.pending_approval.c2"},
    ("order-router", Direction.PRODUCE): {
        "orders.execute.c1",
        "orders.execute.c2",
        "orders.pending_approval.c1",
        "orders.pending_approval.c2",
    },
    ("order-router", Direction.CONSUME): {"orders.proposed"},
}


def test_criterion_04_access_matrix(capsys):
    """Every demo credential against every demo channel in both directions:
    the live broker outcome, the policy evaluator, and an independent
    pattern oracle must all match the declared matrix exactly."""
    with report(capsys, 4, "credential x channel x direction matrix matches declared ACLs and oracle"):
        plane, _ = build_plane()
        channels = sorted(plane.broker.channel_names())
        assert len(channels) == 7

        from adp.broker import Cursor

        for principal in sorted({p for p, _ in DECLARED_ALLOWED}):
            token = plane.token_for(principal)
            _, scope = plane.identity.resolve(token)
            for direction in (Direction.CONSUME, Direction.PRODUCE):
                declared = DECLARED_ALLOWED[(principal, direction)]
                for channel in channels:
                    expected = channel in declared

                    verdict = plane.policy.check_channel_access(scope, channel, direction)
                    assert verdict.allowed == expected, (principal, direction, channel)

                    oracled = any(
                        entry.direction == direction
                        and oracle_pattern_matches(
                            entry.channel_pattern, scope.client_ids, channel
                        )
                        for entry in scope.channel_acls
                    )
                    assert oracled == expected, (principal, direction, channel)

                    try:
                        if direction is Direction.CONSUME:
                            plane.broker.consume(token, Cursor(channel), 1)
                        else:
                            plane.broker.produce(token, channel, b"{}")
                        lived = True
                    except ChannelAccessDenied:
                        lived = False
                    assert lived == expected, (principal, direction, channel)
        plane.close()


# -- criterion 5 -----------------------------------------------------------


def test_criterion_05_rate_limit_exactness(capsys):
    """A 10-per-window trade limit admits exactly 10 submissions, then the
    11th is denied on the record; plus 1,000 random schedules checked
    against a brute-force sliding-window oracle."""
    with report(capsys, 5, "rate limits: 10-per-window exact cutoff plus 1,000-schedule oracle"):
        config = flat_market()
        config["policies"]["rate"] = [
            {"id": "trade-limit", "action_class": "trade", "max_count": 10, "window": 60}
        ]
        plane, _ = build_plane(config)
        token = plane.token_for("execution")
        results = [
            plane.tools.call_tool(
                token, ToolCall("submit-order", {"symbol": "ACME", "side": "buy", "quantity": 1})
            ).ok
            for _ in range(11)
        ]
        assert results == [True] * 10 + [False]
        denials = [r for r in records_of(plane, "tool_denied")]
        assert len(denials) == 1
        assert denials[0].body["kind"] == "rate_limited"
        assert denials[0].body["reason"] == "trade-limit"
        assert len(records_of(plane, "tool_call")) == 10
        plane.close()

        rng = random.Random(31)
        for _ in range(1000):
            max_count = rng.randint(1, 5)
            window = rng.randint(1, 30)
            engine = PolicyEngine()
            policy = RateLimitPolicy("p", ActionClass.TRADE, max_count, window)
            oracle = RateOracle(max_count, window)
            now = 0
            for _ in range(rng.randint(5, 40)):
                now += rng.randint(0, 10)
                assert engine.check_rate("actor", policy, now) == oracle.attempt(now)


# -- criterion 6 -----------------------------------------------------------


def test_criterion_06_budget_never_oversubscribed(capsys):
    """24 threads race one 500-token budget at 30 tokens per call (720
    demanded): total charged stays within budget and every denied call
    leaves exactly one exhaustion record."""
    with report(capsys, 6, "concurrent model calls never exceed the token budget"):
        stack = ModelStack(policies={"budgets": [{"id": "b", "max_tokens": 500}]})
        stack.backend("m1", text_handler(tokens=15))  # 30 total per call
        stack.route()
        token = stack.credential(scope=Scope(budgets_ref="b"))
        outcomes = []
        barrier = threading.Barrier(24)

        def worker():
            barrier.wait()
            try:
                stack.gateway.complete(token, model_request())
                outcomes.append("ok")
            except ModelCallFailed as exc:
                outcomes.append(exc.kind)

        threads = [threading.Thread(target=worker) for _ in range(24)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

        charged = [r.body["charged"] for r in stack.records("model_call")]
        assert sum(charged) <= 500
        denied = [o for o in outcomes if o != "ok"]
        assert denied and all(o == "budget_exhausted" for o in denied)
        # saturating charges drain the pool fully before the denials start
        assert sum(charged) == 500
        exhaustion_records = [
            r for r in stack.records("model_denied") if r.body["reason"] == "budget_exhausted"
        ]
        assert len(exhaustion_records) == len(denied)

        with pytest.raises(ModelCallFailed):
            stack.gateway.complete(token, model_request())
        exhaustion_after = [
            r for r in stack.records("model_denied") if r.body["reason"] == "budget_exhausted"
        ]
        assert len(exhaustion_after) == len(denied) + 1  # exactly one per denied call


# -- criterion 7 -----------------------------------------------------------


def frame_index_of_byte(frames, pos):
    cursor = 0
    for i, frame in enumerate(frames):
        end = cursor + 4 + len(frame)
        if pos < end:
            return i
        cursor = end
    raise AssertionError(f"byte {pos} beyond journal")


def test_criterion_07_tamper_detection(capsys, tmp_path):
    """A 1,000+ record journal survives 500 bit flips, 50 frame deletions,
    and 50 frame insertions: each is detected at exactly the frame the
    closed-form oracle predicts."""
    with report(capsys, 7, "600 journal tampers all detected at the exact first broken record"):
        journal = tmp_path / "long.journal"
        plane, runner = build_plane(flat_market(ticks=50), journal_path=journal)
        runner.run()
        plane.close()

        frames = read_frames(journal)
        n = len(frames)
        assert n >= 1000
        pristine = journal.read_bytes()
        target = tmp_path / "tampered.journal"
        rng = random.Random(4242)

        for _ in range(500):
            pos = rng.randrange(len(pristine))
            blob = bytearray(pristine)
            blob[pos] ^= 1 << rng.randrange(8)
            target.write_bytes(bytes(blob))
            result = verify_journal(target)
            assert not result.ok
            assert result.broken_at == frame_index_of_byte(frames, pos)

        for _ in range(50):
            j = rng.randrange(n - 1)  # tail deletion is a separate case below
            write_frames(target, frames[:j] + frames[j + 1:])
            result = verify_journal(target)
            assert not result.ok
            assert result.broken_at == j

        for trial in range(50):
            j = rng.randrange(n)
            k = j if trial % 5 == 0 else rng.randrange(n + 1)
            write_frames(target, frames[:k] + [frames[j]] + frames[k:])
            inserted_seq = json.loads(frames[j])["record"]["seq"]
            expected = k + 1 if inserted_seq == k else k
            result = verify_journal(target)
            assert not result.ok
            assert result.broken_at == expected

        # dropping the newest frame leaves a shorter but valid chain; the
        # journal alone cannot prove its own length
        write_frames(target, frames[:-1])
        truncated = verify_journal(target)
        assert truncated.ok and truncated.records == n - 1


# -- criterion 8 -----------------------------------------------------------

AUTO_TRACE_SHAPE = {
    # research + 3 decision lookups + submit + 2 polls
    "tool_call": 7,
    "model_call": 4,
    "produce": 3,  # signal, proposal, execute lane
    "consume": 3,
    "route_decision": 1,
    "order_submitted": 1,
    "order_filled": 1,
}
PENDING_TRACE_SHAPE = {
    **AUTO_TRACE_SHAPE,
    "produce": 4,  # + the approver's re-publish
    "consume": 4,  # + the approval intake
    "approval_decision": 1,
}


def test_criterion_08_trace_tree_shapes(capsys):
    """Every record carries a W3C trace context; each order's trace forms a
    single tree with the exact per-kind record counts for its route."""
    with report(capsys, 8, "per-order trace trees have exact shapes and W3C context headers"):
        plane, runner = build_plane(flat_market())
        runner.run()

        by_trace = {}
        for sealed in plane.ledger.records():
            record = sealed.record
            header = format_traceparent(record.trace)
            reparsed = parse_traceparent(header)  # grammar check on every record
            assert reparsed.trace_id == record.trace.trace_id
            by_trace.setdefault(record.trace.trace_id, []).append(record)

        client_traces = [
            trace_id
            for trace_id in by_trace
            if "client.c1" in plane.ledger.trace_labels(trace_id)
        ]
        assert len(client_traces) == 3

        seen_verdicts = []
        for trace_id in client_traces:
            records = by_trace[trace_id]
            roots = [r for r in records if r.parent_span is None]
            assert len(roots) == 1
            span_ids = {r.trace.span_id for r in records}
            for record in records:
                if record.parent_span is not None:
                    assert record.parent_span in span_ids

            route = next(r for r in records if r.event_kind == "route_decision")
            verdict = route.body["verdict"]
            seen_verdicts.append(verdict)
            shape = AUTO_TRACE_SHAPE if verdict == "auto_execute" else PENDING_TRACE_SHAPE
            counts = {}
            for record in records:
                counts[record.event_kind] = counts.get(record.event_kind, 0) + 1
            assert counts == shape, (verdict, counts)

        assert sorted(seen_verdicts) == ["auto_execute", "pending_approval", "pending_approval"]
        plane.close()


# -- criterion 9 -----------------------------------------------------------


def test_criterion_09_runaway_stopped_at_cap(capsys):
    """A backend that only ever asks for another tool call gets exactly the
    turn-cap number of model calls, then a terminating denial record."""
    with report(capsys, 9, "runaway agent stopped after exactly 10 model calls"):
        plane, runner = build_plane(flat_market(ticks=1, decision={"script": "runaway"}))
        summary = runner.run()
        calls = records_of(plane, "model_call")
        assert len(calls) == 10
        terminations = [
            r for r in records_of(plane, "model_denied") if r.body.get("reason") == "turn_limit"
        ]
        assert len(terminations) == 1
        assert terminations[0].body["turns"] == 10
        assert terminations[0].seq > max(r.seq for r in calls)
        assert terminations[0].trace.trace_id == calls[0].trace.trace_id
        assert summary["orders_proposed"] == 0
        plane.close()


# -- criterion 10 ----------------------------------------------------------


def test_criterion_10_seed_determinism(capsys):
    """Two full demo runs with the same seed must produce byte-identical
    hash chains; a different seed must not."""
    with report(capsys, 10, "identical seeds reproduce identical hash chains; different seeds diverge"):
        plane_a, runner_a = build_plane()
        runner_a.run()
        hashes_a = plane_a.ledger.hash_sequence()
        plane_a.close()

        plane_b, runner_b = build_plane()
        runner_b.run()
        hashes_b = plane_b.ledger.hash_sequence()
        plane_b.close()

        plane_c, runner_c = build_plane({"seed": 43})
        runner_c.run()
        hashes_c = plane_c.ledger.hash_sequence()
        plane_c.close()

        assert len(hashes_a) > 300
        assert hashes_a == hashes_b
        assert hashes_a != hashes_c


# -- criterion 11 ----------------------------------------------------------


def test_criterion_11_injection_blocked_before_backend(capsys):
    """An injected research headline is the only qualifying signal each
    tick; the input guardrail must stop it before any backend runs."""
    with report(capsys, 11, "prompt injection blocked before any backend invocation"):
        config = flat_market(
            ticks=4,
            signal_min_strength=6,
            adversarial={"research_injection": True},
        )
        config["research"] = {"mode": "always", "topics": ["markets"], "strength_cycle": [1]}
        plane, runner = build_plane(config)
        summary = runner.run()

        # the poisoned headline really was published as a signal
        signals = lane_payloads(plane, "signals.c1")
        assert len(signals) == 4
        assert all("ignore previous instructions" in p["headline"] for p, _ in signals)

        assert plane.models.total_invocations() == 0  # no backend ever ran
        verdicts = records_of(plane, "guardrail_verdict")
        assert len(verdicts) == 4
        assert all(v.body["rule_id"] == "block-injection" for v in verdicts)
        assert all(v.body["status"] == "blocked" for v in verdicts)
        denials = records_of(plane, "model_denied")
        assert len(denials) == 4
        assert all(d.body["reason"] == "guardrail_input" for d in denials)
        assert summary["orders_proposed"] == 0
        plane.close()


# -- criterion 12 ----------------------------------------------------------


def test_criterion_12_approval_order_audit(capsys):
    """100 randomized runs with human decisions driven through the HTTP
    API.  Ledger-order audit: no above-threshold order is ever submitted
    without an earlier approved decision for that exact order."""
    with report(capsys, 12, "100 randomized runs: every large order carries a prior HTTP approval"):
        rng = random.Random(123)
        band_values = [40_000, 80_000, 99_999, 100_000, 140_000, 200_000]
        audited_orders = 0
        above_threshold_submissions = 0

        for _ in range(100):
            config = flat_market(seed=rng.randint(0, 10**6), approval_mode="none")
            config["decision"] = {
                "script": "standard",
                "value_bands": [
                    [4, rng.choice(band_values)],
                    [7, rng.choice(band_values)],
                    [10, rng.choice(band_values)],
                ],
            }
            plane, runner = build_plane(config)
            client = TestClient(build_app(plane, runner.approvals))
            headers = {"Authorization": f"Bearer {plane.token_for('approver')}"}
            decided = {}

            for _ in range(config["ticks"]):
                runner.run_tick()
                pending = client.get("/approvals/pending", headers=headers).json()["pending"]
                for view in pending:
                    decision = rng.choice(["approved", "denied"])
                    response = client.post(
                        f"/approvals/{view['order_ref']}",
                        json={"decision": decision},
                        headers=headers,
                    )
                    assert response.status_code == 200
                    decided[view["order_ref"]] = decision
            # one drain pass so late approvals reach the simulated broker
            for c in plane.clients:
                plane.tracer.set_hop(None)
                with binding.bind_client(c):
                    runner.execution.step(c)

            records = [s.record for s in plane.ledger.records()]
            routes = {
                r.body["order_ref"]: r
                for r in records
                if r.event_kind == "route_decision" and r.body["verdict"] != "discarded"
            }
            approved_seq = {
                r.body["order_ref"]: r.seq
                for r in records
                if r.event_kind == "approval_decision" and r.body["decision"] == "approved"
            }
            submissions = [r for r in records if r.event_kind == "order_submitted"]

            for submit in submissions:
                ref = submit.body["order_ref"]
                route = routes[ref]
                audited_orders += 1
                if route.body["recomputed_value"] >= THRESHOLD:
                    above_threshold_submissions += 1
                    assert ref in approved_seq, f"{ref} submitted without approval"
                    assert approved_seq[ref] < submit.seq, f"{ref} approval came after submit"
                    assert decided.get(ref) == "approved"
            for ref, decision in decided.items():
                if decision == "denied":
                    assert all(s.body["order_ref"] != ref for s in submissions)

            execute_produces = [
                r
                for r in records
                if r.event_kind == "produce"
                and r.body["outcome"] == "allowed"
                and r.body["channel"].startswith("orders.execute.")
            ]
            approvals_granted = sum(1 for d in decided.values() if d == "approved")
            assert len(execute_produces) == runner.router.counts["auto"] + approvals_granted
            plane.close()

        assert audited_orders >= 100
        assert above_threshold_submissions >= 30  # the randomization really exercised both paths
