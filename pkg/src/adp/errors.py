"""Error taxonomy for the data plane.

Agent-facing surfaces deliberately collapse most of these into uniform
messages; the distinct classes exist so infrastructure code and the
transcript can tell denial modes apart.
"""
from __future__ import annotations


class DataPlaneError(Exception):
    """Base class for every error raised by data-plane components."""


class AuthenticationFailed(DataPlaneError):
    """Credential did not resolve.

    The external message is always "authentication failed"; the internal
    reason (unknown, expired, revoked) is carried for transcript use only.
    """

    def __init__(self, reason: str):
        super().__init__("authentication failed")
        self.reason = reason


class Unauthorized(DataPlaneError):
    """Caller lacks admin authority for a configuration operation."""


class UnknownPrincipal(DataPlaneError):
    pass


class DuplicatePrincipal(DataPlaneError):
    pass


class MalformedScope(DataPlaneError):
    pass


class UnknownCredential(DataPlaneError):
    pass


class ChannelAccessDenied(DataPlaneError):
    pass


class UnknownChannel(DataPlaneError):
    pass


class InvalidChannelName(DataPlaneError):
    pass


class OffsetOutOfRange(DataPlaneError):
    pass


class RateLimited(DataPlaneError):
    pass


class DuplicateTool(DataPlaneError):
    pass


class MalformedDescriptor(DataPlaneError):
    pass


class DuplicateBackend(DataPlaneError):
    pass


class NoEligibleBackend(DataPlaneError):
    pass


class ModelCallFailed(DataPlaneError):
    """Uniform agent-visible model failure.

    str(exc) is always "model call failed"; `kind` holds the internal
    denial class (rate_limited, guardrail_input, guardrail_output,
    budget_exhausted, backend_unavailable) for transcript use.
    """

    def __init__(self, kind: str):
        super().__init__("model call failed")
        self.kind = kind


class InvalidInternalToken(DataPlaneError):
    """An append or other internal capability was presented a non-capability."""


class MalformedRecord(DataPlaneError):
    pass


class RangeOutOfBounds(DataPlaneError):
    pass


class MalformedHeader(DataPlaneError):
    pass


class UnknownClient(DataPlaneError):
    pass


class UnknownSymbol(DataPlaneError):
    pass


class InvalidQuantity(DataPlaneError):
    pass


class UnknownOrder(DataPlaneError):
    pass


class AlreadyDecided(DataPlaneError):
    pass


class ConfigInvalid(DataPlaneError):
    pass
