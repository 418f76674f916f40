"""Simulated end-to-end scenarios on the three-host latency topology.

The client reaches the proxy and the server over separate links; the DNS
resolver is colocated with the proxy, so the client's resolver RTT equals its
proxy RTT.
"""
import argparse
import json
import logging
import random
import sys
from dataclasses import dataclass, field
from typing import List, Optional

from .dnskit import AuthoritativeServer, RType, Zone
from .endpoint import ClientSession, ConnectConfig, DemoServer, Mode, TimingRecord
from .dnskit.message import DnsDecodeError, decode_message
from .miniquic.packet import PacketDecodeError, decode_packet, peek_header
from .netsim import Network, Trace, build_topology
from .proxy import NotifyMode, ProxyDaemon
from .socks import SocksError, decode_udp_header

logger = logging.getLogger("quicsocks.sim")

SERVER_NAME = "www.example.test"
SERVER_PORT = 4433
DNS_PORT = 53
PROXY_PORT = 1080


def latency_topology(rtt_dns: float = 30.0, rtt_server: float = 30.0, rtt_direct: float = 60.0, loss: float = 0.0) -> str:
    """Three hosts with symmetric links sized from the three RTTs."""
    return "\n".join(
        [
            "host client 10.0.0.1",
            "host proxy 10.0.0.2",
            "host server 10.0.0.3",
            f"link client proxy {rtt_dns / 2} {rtt_dns / 2} {loss}",
            f"link proxy server {rtt_server / 2} {rtt_server / 2} {loss}",
            f"link client server {rtt_direct / 2} {rtt_direct / 2} {loss}",
        ]
    )


def classify(data: bytes) -> str:
    """Human-readable trace tag for a datagram payload."""
    quic = _quic_tag(data)
    if quic is not None:
        return quic
    try:
        header, payload = decode_udp_header(data)
    except SocksError:
        header = None
    if header is not None:
        if not payload:
            return "socks:notify"
        inner = _quic_tag(payload)
        return "socks:" + (inner or "opaque")
    try:
        msg = decode_message(data)
        return "dns:response" if msg.qr else "dns:query"
    except DnsDecodeError:
        pass
    return "udp"


def _quic_tag(data: bytes) -> Optional[str]:
    try:
        pkt = decode_packet(data)
    except PacketDecodeError:
        try:
            header = peek_header(data)
        except PacketDecodeError:
            return None
        return f"quic:{header.type.name}"
    frames = ",".join(t.name for t in pkt.frame_types())
    return f"quic:{pkt.type.name}" + (f":{frames}" if frames else "")


def actor_rng(seed: int, name: str):
    return random.Random(f"{seed}:{name}").randbytes


@dataclass
class Testbed:
    net: Network
    server: DemoServer
    authority: AuthoritativeServer
    proxy: Optional[ProxyDaemon]
    seed: int
    sessions: List[ClientSession] = field(default_factory=list)

    @property
    def server_address(self):
        return self.server.address

    @property
    def resolver_address(self):
        return self.authority.address

    @property
    def proxy_address(self):
        return self.proxy.control_address if self.proxy is not None else None

    def config(self, mode: Mode, **kw) -> ConnectConfig:
        return ConnectConfig(
            SERVER_NAME,
            SERVER_PORT,
            mode=mode,
            proxy=self.proxy_address if mode != Mode.DEFAULT else None,
            resolver=self.resolver_address,
            **kw,
        )

    def session(self, config: ConnectConfig, on_complete, name: str = "client", **kw) -> ClientSession:
        host = self.net.host("client")
        s = ClientSession(host, config, on_complete, rng=actor_rng(self.seed, f"{name}:{len(self.sessions)}"), **kw)
        self.sessions.append(s)
        return s


def build_testbed(
    topology: Optional[str] = None,
    *,
    retry: bool = False,
    seed: int = 0,
    notify: NotifyMode = NotifyMode.EARLY,
    with_proxy: bool = True,
) -> Testbed:
    net = build_topology(topology or latency_topology(), seed=seed, classifier=classify)
    proxy_host = net.host("proxy")
    server_host = net.host("server")
    zone = Zone()
    zone.add(SERVER_NAME, RType.A, 300, server_host.ip)
    authority = AuthoritativeServer(proxy_host, zone, (proxy_host.ip, DNS_PORT))
    server = DemoServer(
        server_host,
        (server_host.ip, SERVER_PORT),
        retry=retry,
        secret=actor_rng(seed, "secret")(32),
        rng=actor_rng(seed, "server"),
    )
    proxy = None
    if with_proxy:
        proxy = ProxyDaemon(
            proxy_host,
            upstream_dns=(proxy_host.ip, DNS_PORT),
            listen_control=(proxy_host.ip, PROXY_PORT),
            notify=notify,
        )
    return Testbed(net, server, authority, proxy, seed)


@dataclass
class ScenarioResult:
    record: Optional[TimingRecord]
    trace: Trace
    testbed: Testbed
    session: ClientSession


def run_scenario(
    scenario: str,
    *,
    retry: bool = False,
    topology: Optional[str] = None,
    seed: int = 0,
    migrate: bool = False,
    probe_early: bool = False,
    notify: NotifyMode = NotifyMode.EARLY,
    send_after: int = 0,
    deadline_ms: float = 60_000.0,
) -> ScenarioResult:
    """Run one connection. ``scenario`` is ``status_quo`` (direct) or ``proposal``
    (warm proxied), or a raw mode name. ``send_after`` APPDATA messages are sent
    once the session completes."""
    mode = {"status_quo": Mode.DEFAULT, "proposal": Mode.WARM}.get(scenario) or Mode(scenario)
    bed = build_testbed(topology, retry=retry, seed=seed, notify=notify)
    cfg = bed.config(mode, migration=migrate, probe_early=probe_early)
    box = {}

    def done(record: TimingRecord) -> None:
        box["record"] = record
        session = box["session"]
        if record.ok:
            for i in range(send_after):
                session.send(f"message {i}".encode())

    box["session"] = bed.session(cfg, done)
    bed.net.host("client").call_later(0, box["session"].start)
    trace = bed.net.run_until_quiescent(deadline_ms)
    return ScenarioResult(box.get("record"), trace, bed, box["session"])


# (scenario, retry, handshake completion in ms) on the default 30/30/60 ms topology
REFERENCE_TIMES = [
    ("status_quo", False, 90.0),
    ("status_quo", True, 150.0),
    ("proposal", False, 60.0),
    ("proposal", True, 90.0),
]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="qsk-sim", description="Run simulated connection scenarios in logical time.")
    parser.add_argument("--rtt-dns", type=float, default=30.0)
    parser.add_argument("--rtt-server", type=float, default=30.0)
    parser.add_argument("--rtt-direct", type=float, default=60.0)
    parser.add_argument("--topology", help="topology spec file (overrides the RTT flags)")
    parser.add_argument("--scenario", choices=["status_quo", "proposal", "all"], default="all")
    parser.add_argument("--retry", choices=["on", "off", "both"], default="both")
    parser.add_argument("--migrate", action="store_true")
    parser.add_argument("--probe-early", action="store_true")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--trace-out", help="write the JSON-lines trace of the last run here")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)

    if args.topology:
        with open(args.topology) as fh:
            topology = fh.read()
    else:
        topology = latency_topology(args.rtt_dns, args.rtt_server, args.rtt_direct)
    scenarios = ["status_quo", "proposal"] if args.scenario == "all" else [args.scenario]
    retries = {"on": [True], "off": [False], "both": [False, True]}[args.retry]
    result = None
    for scenario in scenarios:
        for retry in retries:
            result = run_scenario(
                scenario, retry=retry, topology=topology, seed=args.seed, migrate=args.migrate, probe_early=args.probe_early
            )
            rec = result.record
            out = {"scenario": scenario, "retry": retry, "quiescent": result.trace.quiescent}
            out.update(json.loads(rec.to_json()) if rec else {"error": "no result"})
            print(json.dumps(out, sort_keys=True))
    if args.trace_out and result is not None:
        result.trace.write(args.trace_out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
