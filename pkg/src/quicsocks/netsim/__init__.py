"""Deterministic discrete-event network simulator."""
from .core import (
    Host,
    LinkProfile,
    Network,
    SimStream,
    SimUdpSocket,
    TopologyError,
    Trace,
    TraceEvent,
    add_network_observer,
    check_no_spoofing,
)
from .topology import TopologySpec, build_topology


def run_until_quiescent(network: Network, deadline_ms=None) -> Trace:
    return network.run_until_quiescent(deadline_ms)


__all__ = [
    "Host",
    "LinkProfile",
    "Network",
    "SimStream",
    "SimUdpSocket",
    "TopologyError",
    "TopologySpec",
    "Trace",
    "TraceEvent",
    "add_network_observer",
    "build_topology",
    "check_no_spoofing",
    "run_until_quiescent",
]
