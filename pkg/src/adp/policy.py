"""Deterministic policy evaluation.

Everything here is a pure function of configuration, inputs, and counter
state: channel ACL checks, sliding-window rate limits, token budgets,
guardrails, and redaction.  Verdicts are values, never inferences, so the
same state always produces the same answer.
"""
from __future__ import annotations

import functools
import json
import re
import threading
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Iterable, Sequence

import jsonschema

from .errors import ConfigInvalid

if TYPE_CHECKING:  # pragma: no cover - typing only
    from .identity import Scope

# ---------------------------------------------------------------------------
# channel names and patterns
# ---------------------------------------------------------------------------

# concrete names: [a-z_]+(\.[a-z0-9_]+)*
_FIRST_SEGMENT_RE = re.compile(r"^[a-z_]+$")
_SEGMENT_RE = re.compile(r"^[a-z0-9_]+$")

CLIENT_TEMPLATE = "{client_id}"


class Direction(str, Enum):
    PRODUCE = "produce"
    CONSUME = "consume"


@dataclass(frozen=True)
class AclEntry:
    channel_pattern: str
    direction: Direction


def valid_channel_name(name: str) -> bool:
    segments = name.split(".")
    if not segments or not _FIRST_SEGMENT_RE.match(segments[0]):
        return False
    return all(_SEGMENT_RE.match(s) for s in segments[1:])


def valid_channel_pattern(pattern: str) -> bool:
    """Patterns are channel names where one segment may be the {client_id}
    template and the final segment may be `*`.  No other wildcards."""
    segments = pattern.split(".")
    if not segments:
        return False
    for i, seg in enumerate(segments):
        if seg == CLIENT_TEMPLATE:
            continue
        if seg == "*":
            # trailing only, and never the whole pattern: a bare * would
            # grant every channel
            if i != len(segments) - 1 or i == 0:
                return False
            continue
        rule = _FIRST_SEGMENT_RE if i == 0 else _SEGMENT_RE
        if not rule.match(seg):
            return False
    return True


def _concrete_match(pattern_segments: Sequence[str], channel_segments: Sequence[str]) -> bool:
    if pattern_segments and pattern_segments[-1] == "*":
        head = pattern_segments[:-1]
        # trailing * stands for one or more segments
        return len(channel_segments) > len(head) and list(channel_segments[: len(head)]) == list(head)
    return list(pattern_segments) == list(channel_segments)


def channel_pattern_matches(pattern: str, client_ids: Iterable[str], channel: str) -> bool:
    channel_segments = channel.split(".")
    pattern_segments = pattern.split(".")
    if CLIENT_TEMPLATE not in pattern_segments:
        return _concrete_match(pattern_segments, channel_segments)
    for client_id in sorted(client_ids):
        expanded = [client_id if s == CLIENT_TEMPLATE else s for s in pattern_segments]
        if _concrete_match(expanded, channel_segments):
            return True
    return False


# ---------------------------------------------------------------------------
# policy types
# ---------------------------------------------------------------------------


class ActionClass(str, Enum):
    TRADE = "trade"
    TOOL_CALL = "tool_call"
    MODEL_CALL = "model_call"
    PRODUCE = "produce"


@dataclass(frozen=True)
class RateLimitPolicy:
    id: str
    action_class: ActionClass
    max_count: int
    window: int  # logical ticks

    def __post_init__(self):
        if self.max_count < 0:
            raise ConfigInvalid(f"rate policy {self.id}: max_count must be >= 0")
        if self.window <= 0:
            raise ConfigInvalid(f"rate policy {self.id}: window must be > 0")


@dataclass(frozen=True)
class BudgetPolicy:
    id: str
    max_tokens: int
    period: str = "total"

    def __post_init__(self):
        if self.max_tokens < 0:
            raise ConfigInvalid(f"budget policy {self.id}: max_tokens must be >= 0")


class GuardrailDirection(str, Enum):
    INPUT = "input"
    OUTPUT = "output"


class GuardrailKind(str, Enum):
    PATTERN_DENY = "pattern_deny"
    SCHEMA_VALIDATE = "schema_validate"


class GuardrailAction(str, Enum):
    BLOCK = "block"
    FLAG = "flag"


@dataclass(frozen=True)
class GuardrailRule:
    id: str
    direction: GuardrailDirection
    kind: GuardrailKind
    pattern_or_schema: str
    action: GuardrailAction

    def __post_init__(self):
        # invalid rules must fail at config load, not at evaluation time
        if self.kind is GuardrailKind.PATTERN_DENY:
            try:
                re.compile(self.pattern_or_schema)
            except re.error as exc:
                raise ConfigInvalid(f"guardrail {self.id}: bad pattern: {exc}") from exc
        else:
            try:
                schema = json.loads(self.pattern_or_schema)
                jsonschema.Draft202012Validator.check_schema(schema)
            except (ValueError, jsonschema.SchemaError) as exc:
                raise ConfigInvalid(f"guardrail {self.id}: bad schema: {exc}") from exc


_BACKREF_RE = re.compile(r"\\\d|\\g<")


@dataclass(frozen=True)
class RedactionRule:
    id: str
    pattern: str
    replacement: str

    def __post_init__(self):
        try:
            re.compile(self.pattern)
        except re.error as exc:
            raise ConfigInvalid(f"redaction {self.id}: bad pattern: {exc}") from exc
        # redaction must be lossy: the replacement may not echo captures
        if _BACKREF_RE.search(self.replacement):
            raise ConfigInvalid(f"redaction {self.id}: replacement must not reference captures")


@dataclass(frozen=True)
class ThresholdPolicy:
    autonomy_threshold: int  # minor currency units

    def __post_init__(self):
        if self.autonomy_threshold < 0:
            raise ConfigInvalid("autonomy_threshold must be >= 0")


@functools.lru_cache(maxsize=256)
def _compiled(pattern: str) -> re.Pattern:
    return re.compile(pattern)


@functools.lru_cache(maxsize=64)
def _schema_validator(schema_text: str) -> jsonschema.Draft202012Validator:
    return jsonschema.Draft202012Validator(json.loads(schema_text))


# ---------------------------------------------------------------------------
# verdicts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AccessVerdict:
    allowed: bool
    reason: str | None = None


@dataclass(frozen=True)
class GuardrailVerdict:
    status: str  # pass | blocked | flagged
    rule_id: str | None = None
    rule_ids: tuple[str, ...] = ()

    @property
    def blocked(self) -> bool:
        return self.status == "blocked"


# ---------------------------------------------------------------------------
# engine
# ---------------------------------------------------------------------------


class PolicyEngine:
    """Holds policy configuration plus the rate/budget counters.

    Counter mutation happens under a single lock so a check and its charge
    are one atomic step; pure evaluators take no lock at all.
    """

    def __init__(self):
        self.rate_policies: dict[str, RateLimitPolicy] = {}
        self.budget_policies: dict[str, BudgetPolicy] = {}
        self.guardrails: list[GuardrailRule] = []
        self.redactions: list[RedactionRule] = []
        self._lock = threading.Lock()
        self._rate_events: dict[tuple[str, str], list[int]] = {}
        self._budget_used: dict[tuple[str, str], int] = {}

    # -- configuration -------------------------------------------------

    def load_config(self, config: dict) -> None:
        """Load a policy document: {"rate": [...], "budgets": [...],
        "guardrails": [...], "redactions": [...]}.  Additive; same-id
        entries replace earlier ones."""
        try:
            for entry in config.get("rate", []):
                policy = RateLimitPolicy(
                    id=entry["id"],
                    action_class=ActionClass(entry["action_class"]),
                    max_count=int(entry["max_count"]),
                    window=int(entry["window"]),
                )
                self.rate_policies[policy.id] = policy
            for entry in config.get("budgets", []):
                budget = BudgetPolicy(
                    id=entry["id"],
                    max_tokens=int(entry["max_tokens"]),
                    period=entry.get("period", "total"),
                )
                self.budget_policies[budget.id] = budget
            for entry in config.get("guardrails", []):
                rule = GuardrailRule(
                    id=entry["id"],
                    direction=GuardrailDirection(entry["direction"]),
                    kind=GuardrailKind(entry["kind"]),
                    pattern_or_schema=entry["pattern_or_schema"],
                    action=GuardrailAction(entry["action"]),
                )
                self.guardrails = [r for r in self.guardrails if r.id != rule.id] + [rule]
            for entry in config.get("redactions", []):
                red = RedactionRule(
                    id=entry["id"], pattern=entry["pattern"], replacement=entry["replacement"]
                )
                self.redactions = [r for r in self.redactions if r.id != red.id] + [red]
        except (KeyError, ValueError) as exc:
            raise ConfigInvalid(f"bad policy config: {exc}") from exc

    # -- channel access ------------------------------------------------

    @staticmethod
    def check_channel_access(scope: "Scope", channel: str, direction: Direction) -> AccessVerdict:
        if not valid_channel_name(channel):
            return AccessVerdict(False, "invalid_channel_name")
        for entry in scope.channel_acls:
            if entry.direction != direction:
                continue
            if channel_pattern_matches(entry.channel_pattern, scope.client_ids, channel):
                return AccessVerdict(True)
        return AccessVerdict(False, "no_matching_acl")

    # -- rate limiting -------------------------------------------------

    def check_rate(self, principal_id: str, policy: RateLimitPolicy, now: int) -> bool:
        allowed, _ = self.check_rates(principal_id, [policy], now)
        return allowed

    def check_rates(
        self, principal_id: str, policies: Sequence[RateLimitPolicy], now: int
    ) -> tuple[bool, str | None]:
        """Atomically check every policy and, only if all allow, record the
        event in each.  Returns (allowed, denying_policy_id)."""
        with self._lock:
            for policy in policies:
                if self._window_count(principal_id, policy, now) >= policy.max_count:
                    return False, policy.id
            for policy in policies:
                self._rate_events.setdefault((principal_id, policy.id), []).append(now)
            return True, None

    def _window_count(self, principal_id: str, policy: RateLimitPolicy, now: int) -> int:
        # half-open window (now - window, now]
        events = self._rate_events.get((principal_id, policy.id), [])
        floor = now - policy.window
        live = [t for t in events if floor < t <= now]
        self._rate_events[(principal_id, policy.id)] = live
        return len(live)

    # -- budgets -------------------------------------------------------

    def charge_budget(
        self, principal_id: str, policy: BudgetPolicy, tokens: int
    ) -> tuple[bool, int]:
        """Strict check-and-charge: allow iff used + tokens <= max.
        Returns (allowed, remaining); a deny changes nothing."""
        if tokens < 0:
            raise ValueError("tokens must be >= 0")
        key = (principal_id, policy.id)
        with self._lock:
            used = self._budget_used.get(key, 0)
            if used + tokens > policy.max_tokens:
                return False, policy.max_tokens - used
            self._budget_used[key] = used + tokens
            return True, policy.max_tokens - used - tokens

    def charge_budget_saturating(
        self, principal_id: str, policy: BudgetPolicy, tokens: int
    ) -> int:
        """Charge up to the remaining budget and return the amount actually
        charged.  Used for post-hoc usage accounting where the work already
        happened and the counter must still never exceed the cap."""
        if tokens < 0:
            raise ValueError("tokens must be >= 0")
        key = (principal_id, policy.id)
        with self._lock:
            used = self._budget_used.get(key, 0)
            charged = min(tokens, policy.max_tokens - used)
            self._budget_used[key] = used + charged
            return charged

    def budget_remaining(self, principal_id: str, policy: BudgetPolicy) -> int:
        with self._lock:
            return policy.max_tokens - self._budget_used.get((principal_id, policy.id), 0)

    def budget_used(self, principal_id: str, policy: BudgetPolicy) -> int:
        with self._lock:
            return self._budget_used.get((principal_id, policy.id), 0)

    # -- guardrails ----------------------------------------------------

    @staticmethod
    def evaluate_guardrails(
        rules: Sequence[GuardrailRule], direction: GuardrailDirection, content: str
    ) -> GuardrailVerdict:
        flagged: list[str] = []
        for rule in rules:
            if rule.direction != direction:
                continue
            if not _rule_fires(rule, content):
                continue
            if rule.action is GuardrailAction.BLOCK:
                return GuardrailVerdict(status="blocked", rule_id=rule.id)
            flagged.append(rule.id)
        if flagged:
            return GuardrailVerdict(status="flagged", rule_ids=tuple(flagged))
        return GuardrailVerdict(status="pass")

    def guardrails_for(self, direction: GuardrailDirection) -> list[GuardrailRule]:
        return [r for r in self.guardrails if r.direction == direction]

    # -- redaction -----------------------------------------------------

    @staticmethod
    def redact(rules: Sequence[RedactionRule], content: str) -> tuple[str, int]:
        """Apply every rule; earlier rules win where matches overlap.
        Returns the redacted content and the number of replaced spans."""
        taken: list[tuple[int, int, str]] = []  # (start, end, replacement)
        for rule in rules:
            for m in _compiled(rule.pattern).finditer(content):
                start, end = m.span()
                if start == end:
                    continue  # zero-width matches cannot be redacted
                if any(start < t_end and t_start < end for t_start, t_end, _ in taken):
                    continue
                taken.append((start, end, rule.replacement))
        if not taken:
            return content, 0
        taken.sort(key=lambda t: t[0])
        out: list[str] = []
        pos = 0
        for start, end, replacement in taken:
            out.append(content[pos:start])
            out.append(replacement)
            pos = end
        out.append(content[pos:])
        return "".join(out), len(taken)


def _rule_fires(rule: GuardrailRule, content: str) -> bool:
    if rule.kind is GuardrailKind.PATTERN_DENY:
        return _compiled(rule.pattern_or_schema).search(content) is not None
    # schema_validate fires when the content is not valid JSON for the schema
    try:
        document = json.loads(content)
    except ValueError:
        return True
    return not _schema_validator(rule.pattern_or_schema).is_valid(document)
