"""Command line entry points.

Exit codes: 0 success, 1 operational failure (broken chain, divergent
replay, denied request), 2 configuration or usage error.
"""
from __future__ import annotations

import json
import sys
import urllib.error
import urllib.parse
import urllib.request
from pathlib import Path

import click

from .errors import ConfigInvalid, DataPlaneError, MalformedRecord
from .http_api import build_app
from .ledger import canonical_json, read_journal_hashes, verify_journal
from .pipeline import PipelineRunner
from .plane import DataPlane
from .scenario import Scenario


@click.group()
def main():
    """Out-of-band data plane for multi-agent pipelines."""


def _load_scenario(scenario_path, seed, ticks) -> Scenario:
    if scenario_path:
        scenario = Scenario.from_file(scenario_path)
    else:
        scenario = Scenario.from_dict({})
    return scenario.with_overrides(seed=seed, ticks=ticks)


@main.command()
@click.option("--scenario", "scenario_path", default=None, help="Scenario JSON file.")
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--ticks", type=int, default=None, help="Override the tick count.")
@click.option("--serve", is_flag=True, help="Serve the HTTP API after the run.")
@click.option("--listen", default="127.0.0.1:8400", show_default=True, help="host:port for --serve.")
@click.option(
    "--ledger",
    "ledger_path",
    envvar="ADP_LEDGER",
    default=None,
    help="Journal file for the transcript ledger (env: ADP_LEDGER).",
)
def run(scenario_path, seed, ticks, serve, listen, ledger_path):
    """Run the portfolio pipeline and print a run summary."""
    try:
        scenario = _load_scenario(scenario_path, seed, ticks)
    except ConfigInvalid as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    plane = DataPlane(scenario, ledger_path)
    try:
        runner = PipelineRunner(plane)
        summary = runner.run()
    except DataPlaneError as exc:
        click.echo(f"error: {exc}", err=True)
        plane.close()
        sys.exit(1)
    click.echo(json.dumps(summary, indent=2, sort_keys=True))
    if serve:
        import uvicorn

        host, _, port = listen.rpartition(":")
        app = build_app(plane, runner.approvals)
        uvicorn.run(app, host=host or "127.0.0.1", port=int(port), log_level="warning")
    plane.close()


@main.command()
@click.option(
    "--ledger",
    "ledger_path",
    envvar="ADP_LEDGER",
    required=True,
    help="Journal file to verify (env: ADP_LEDGER).",
)
def verify(ledger_path):
    """Verify a journal's hash chain from disk."""
    path = Path(ledger_path)
    if not path.exists():
        click.echo(f"error: ledger file not found: {path}", err=True)
        sys.exit(2)
    result = verify_journal(path)
    if result.ok:
        click.echo(f"ok {result.records} records")
        return
    click.echo(f"broken at record {result.broken_at}", err=True)
    sys.exit(1)


@main.command()
@click.option("--ledger", "ledger_path", envvar="ADP_LEDGER", required=True)
@click.option("--scenario", "scenario_path", default=None)
@click.option("--seed", type=int, default=None)
@click.option("--ticks", type=int, default=None)
def replay(ledger_path, scenario_path, seed, ticks):
    """Re-run a scenario in memory and compare hashes against a journal."""
    path = Path(ledger_path)
    if not path.exists():
        click.echo(f"error: ledger file not found: {path}", err=True)
        sys.exit(2)
    try:
        recorded = read_journal_hashes(path)
    except MalformedRecord as exc:
        click.echo(f"error: journal unreadable: {exc}", err=True)
        sys.exit(1)
    try:
        scenario = _load_scenario(scenario_path, seed, ticks)
    except ConfigInvalid as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    plane = DataPlane(scenario)
    PipelineRunner(plane).run()
    fresh = plane.ledger.hash_sequence()
    plane.close()
    if fresh == recorded:
        click.echo(f"replay ok {len(fresh)} records")
        return
    divergence = next(
        (i for i, (a, b) in enumerate(zip(fresh, recorded)) if a != b),
        min(len(fresh), len(recorded)),
    )
    click.echo(
        f"replay diverged at record {divergence} "
        f"(journal {len(recorded)} records, replay {len(fresh)})",
        err=True,
    )
    sys.exit(1)


@main.command()
@click.option("--url", default="http://127.0.0.1:8400", show_default=True)
@click.option("--token", required=True, help="Credential holding transcript grants.")
@click.option("--trace-id", default=None)
@click.option("--actor", default=None)
@click.option("--event-kind", default=None)
@click.option("--seq-from", type=int, default=None)
@click.option("--seq-to", type=int, default=None)
def transcripts(url, token, trace_id, actor, event_kind, seq_from, seq_to):
    """Fetch transcript records over HTTP, one canonical JSON line each."""
    params = {
        "trace_id": trace_id,
        "actor": actor,
        "event_kind": event_kind,
        "seq_from": seq_from,
        "seq_to": seq_to,
    }
    query = urllib.parse.urlencode({k: v for k, v in params.items() if v is not None})
    target = url.rstrip("/") + "/transcripts" + (f"?{query}" if query else "")
    request = urllib.request.Request(target, headers={"Authorization": f"Bearer {token}"})
    try:
        with urllib.request.urlopen(request) as response:
            payload = json.load(response)
    except urllib.error.HTTPError as exc:
        detail = exc.read().decode("utf-8", "replace")
        click.echo(f"error: {exc.code}: {detail}", err=True)
        sys.exit(1)
    except urllib.error.URLError as exc:
        click.echo(f"error: {exc.reason}", err=True)
        sys.exit(1)
    for record in payload.get("records", []):
        click.echo(canonical_json(record).decode("utf-8"))


if __name__ == "__main__":
    main()
