"""Portfolio pipeline: scripted agents, order routing, approvals, runner."""

from .agents import DecisionRuntime, ExecutionRuntime, SignalRuntime
from .approvals import ApprovalService, PendingOrder
from .routing import OrderRouter
from .runner import PipelineRunner

__all__ = [
    "ApprovalService",
    "DecisionRuntime",
    "ExecutionRuntime",
    "OrderRouter",
    "PendingOrder",
    "PipelineRunner",
    "SignalRuntime",
]
