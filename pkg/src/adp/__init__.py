"""Out-of-band control plane for multi-agent pipelines.

Credentials, channel scopes, rate and budget policy, a scoped message
broker, tool and model gateways, and a hash-chained transcript ledger.
Agents only ever see payload bytes and uniform failure strings; identity,
trace context, and policy metadata travel around them, not through them.
"""

__version__ = "0.1.0"
