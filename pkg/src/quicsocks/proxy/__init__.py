"""The proxy: SOCKS UDP relay with proxy-side DNS resolution and retry replay."""
from .core import (
    Association,
    ControlError,
    Metrics,
    NotifyMode,
    ProxyCore,
    Relay,
    RelayState,
    Resolve,
    ResolveFailed,
    ResolveOk,
    SendToClient,
    SendToServer,
)
from .daemon import ProxyDaemon

__all__ = [
    "Association",
    "ControlError",
    "Metrics",
    "NotifyMode",
    "ProxyCore",
    "ProxyDaemon",
    "Relay",
    "RelayState",
    "Resolve",
    "ResolveFailed",
    "ResolveOk",
    "SendToClient",
    "SendToServer",
]
