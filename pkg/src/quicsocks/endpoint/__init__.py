"""Client library, demo server and timing harness."""
from .client import ClientSession, ConnectConfig, Mode, ProxyAssociation, TimingRecord
from .server import DemoServer, serve
from .timing import TimingSuite, TimingSummary, connect, run_timing_suite, summarize

__all__ = [
    "ClientSession",
    "ConnectConfig",
    "DemoServer",
    "Mode",
    "ProxyAssociation",
    "TimingRecord",
    "TimingSuite",
    "TimingSummary",
    "connect",
    "run_timing_suite",
    "serve",
    "summarize",
]
