"""Deterministic in-process network: hosts, delay links and a logical clock.

Every actor runs against a :class:`Host`, which offers the same small runtime
surface as :class:`quicsocks.runtime.AsyncioRuntime` (clock, timers, UDP
sockets, TCP-like streams). Time is logical milliseconds; processing takes no
time, so latency arithmetic comes out exact.
"""
import heapq
import ipaddress
import itertools
import json
import logging
import random
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Tuple

logger = logging.getLogger("quicsocks.netsim")

Address = Tuple[str, int]
EPHEMERAL_START = 49152


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class LinkProfile:
    a: str
    b: str
    delay_ab_ms: float
    delay_ba_ms: Optional[float] = None
    loss_rate: float = 0.0

    def __post_init__(self) -> None:
        if self.delay_ba_ms is None:
            object.__setattr__(self, "delay_ba_ms", self.delay_ab_ms)
        if self.delay_ab_ms < 0 or self.delay_ba_ms < 0:
            raise TopologyError(f"negative delay on link {self.a}-{self.b}")
        if not 0.0 <= self.loss_rate <= 1.0:
            raise TopologyError(f"loss rate outside [0, 1] on link {self.a}-{self.b}")
        if self.a == self.b:
            raise TopologyError("a link needs two distinct hosts")

    @property
    def link_id(self) -> str:
        return "/".join(sorted((self.a, self.b)))

    def delay_from(self, sender: str) -> float:
        return self.delay_ab_ms if sender == self.a else self.delay_ba_ms


@dataclass(frozen=True)
class TraceEvent:
    time: float
    kind: str  # "send" | "deliver" | "drop"
    datagram_id: int
    sender: str  # host that emitted the datagram
    src: Address
    dst: Address
    length: int
    tag: str
    reason: str = ""
    data: bytes = field(default=b"", repr=False, compare=False)

    def to_json(self) -> str:
        d = asdict(self)
        del d["data"]
        d["src"] = f"{self.src[0]}:{self.src[1]}"
        d["dst"] = f"{self.dst[0]}:{self.dst[1]}"
        return json.dumps(d, sort_keys=True)


class Trace:
    """Append-only record of every datagram and stream segment."""

    def __init__(self) -> None:
        self.events: List[TraceEvent] = []
        self.quiescent = True
        self.pending_events = 0

    def append(self, event: TraceEvent) -> None:
        self.events.append(event)

    def __iter__(self):
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def of_kind(self, kind: str) -> List[TraceEvent]:
        return [e for e in self.events if e.kind == kind]

    def to_jsonl(self) -> str:
        return "".join(e.to_json() + "\n" for e in self.events)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())


class Timer:
    __slots__ = ("time", "callback", "daemon", "cancelled", "_net")

    def __init__(self, net: "Network", time: float, callback: Callable[[], None], daemon: bool) -> None:
        self._net = net
        self.time = time
        self.callback = callback
        self.daemon = daemon
        self.cancelled = False

    def cancel(self) -> None:
        if not self.cancelled:
            self.cancelled = True
            if not self.daemon:
                self._net._live -= 1


class SimUdpSocket:
    def __init__(self, host: "Host", address: Address, on_datagram) -> None:
        self.host = host
        self.local_address = address
        self._on_datagram = on_datagram
        self.closed = False

    def sendto(self, data: bytes, addr: Address) -> None:
        if self.closed:
            raise OSError("socket is closed")
        self.host.network._transmit(self.host, self.local_address, tuple(addr), bytes(data), "udp", self)

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            self.host._sockets.pop(self.local_address, None)

    def _deliver(self, data: bytes, src: Address) -> None:
        self._on_datagram(data, src)


class SimStream:
    """One end of a reliable, ordered byte stream between two hosts."""

    def __init__(self, host: "Host", local: Address, peer: Address) -> None:
        self.host = host
        self.local_address = local
        self.peer_address = peer
        self.remote: Optional["SimStream"] = None
        self._on_data = None
        self._on_close = None
        self._backlog: List[bytes] = []
        self._peer_closed = False
        self.closed = False

    def set_handlers(self, on_data, on_close=None) -> None:
        self._on_data = on_data
        self._on_close = on_close
        backlog, self._backlog = self._backlog, []
        for chunk in backlog:
            on_data(chunk)
        if self._peer_closed and on_close is not None:
            on_close()

    def write(self, data: bytes) -> None:
        if self.closed or not data:
            return
        self.host.network._segment(self, "tcp-data", bytes(data))

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        self.host._streams.discard(self)
        self.host.network._segment(self, "tcp-fin", b"")

    def _receive(self, data: bytes) -> None:
        if self.closed:
            return
        if self._on_data is None:
            self._backlog.append(data)
        else:
            self._on_data(data)

    def _remote_closed(self) -> None:
        if self._peer_closed:
            return
        self._peer_closed = True
        if self._on_close is not None and not self.closed:
            self._on_close()
        if not self.closed:
            self.closed = True
            self.host._streams.discard(self)


class SimListener:
    def __init__(self, host: "Host", address: Address, on_accept) -> None:
        self.host = host
        self.local_address = address
        self.on_accept = on_accept

    def close(self) -> None:
        self.host._listeners.pop(self.local_address, None)


class Host:
    """A simulated machine; also the runtime handed to actors living on it."""

    def __init__(self, network: "Network", name: str, ip: str) -> None:
        self.network = network
        self.name = name
        self.ip = ip
        self._sockets: Dict[Address, SimUdpSocket] = {}
        self._listeners: Dict[Address, SimListener] = {}
        self._streams = set()
        self._next_port = EPHEMERAL_START

    def __repr__(self) -> str:
        return f"<Host {self.name} {self.ip}>"

    # runtime surface

    def now(self) -> float:
        return self.network.now

    def call_later(self, delay_ms: float, callback: Callable[[], None], daemon: bool = False) -> Timer:
        return self.network.call_later(delay_ms, callback, daemon=daemon)

    def _local(self, addr: Optional[Address]) -> Address:
        host, port = addr if addr is not None else (self.ip, 0)
        if host in ("0.0.0.0", "", None):
            host = self.ip
        if host != self.ip:
            raise OSError(f"cannot bind {host} on host {self.name} ({self.ip})")
        if port == 0:
            while (self.ip, self._next_port) in self._sockets or (self.ip, self._next_port) in self._listeners:
                self._next_port += 1
            port = self._next_port
            self._next_port += 1
        return (host, port)

    def bind_udp(self, addr: Optional[Address], on_datagram) -> SimUdpSocket:
        local = self._local(addr)
        if local in self._sockets:
            raise OSError(f"address in use: {local}")
        sock = SimUdpSocket(self, local, on_datagram)
        self._sockets[local] = sock
        return sock

    def listen_tcp(self, addr: Optional[Address], on_accept) -> SimListener:
        local = self._local(addr)
        if local in self._listeners:
            raise OSError(f"address in use: {local}")
        listener = SimListener(self, local, on_accept)
        self._listeners[local] = listener
        return listener

    def connect_tcp(self, addr: Address, on_connected, on_error=None) -> None:
        local = self._local(None)
        stream = SimStream(self, local, tuple(addr))
        self._streams.add(stream)
        self.network._syn(stream, on_connected, on_error)


class Network:
    def __init__(self, seed: int = 0, classifier: Optional[Callable[[bytes], str]] = None) -> None:
        self.seed = seed
        self.classifier = classifier or (lambda data: "udp")
        self.now = 0.0
        self.hosts: Dict[str, Host] = {}
        self._by_ip: Dict[str, Host] = {}
        self._links: Dict[Tuple[str, str], LinkProfile] = {}
        self._loss_rng: Dict[str, random.Random] = {}
        self._queue: List[Tuple[float, int, Timer]] = []
        self._seq = itertools.count()
        self._datagram_ids = itertools.count(1)
        self._live = 0
        self.trace = Trace()
        _register(self)

    # topology

    def add_host(self, name: str, ip: Optional[str] = None) -> Host:
        if name in self.hosts:
            raise TopologyError(f"duplicate host {name!r}")
        if ip is None:
            ip = f"10.0.{len(self.hosts) // 250}.{len(self.hosts) % 250 + 1}"
        ip = str(ipaddress.ip_address(ip))
        if ip in self._by_ip:
            raise TopologyError(f"duplicate address {ip}")
        host = Host(self, name, ip)
        self.hosts[name] = host
        self._by_ip[ip] = host
        return host

    def add_link(self, profile: LinkProfile) -> None:
        for name in (profile.a, profile.b):
            if name not in self.hosts:
                raise TopologyError(f"link references unknown host {name!r}")
        key = tuple(sorted((profile.a, profile.b)))
        if key in self._links:
            raise TopologyError(f"duplicate link {profile.a}-{profile.b}")
        self._links[key] = profile
        self._loss_rng[profile.link_id] = random.Random(f"{self.seed}/{profile.link_id}")

    def link(self, a: str, b: str, delay_ab_ms: float, delay_ba_ms: Optional[float] = None, loss_rate: float = 0.0) -> None:
        self.add_link(LinkProfile(a, b, delay_ab_ms, delay_ba_ms, loss_rate))

    def host(self, name: str) -> Host:
        return self.hosts[name]

    def host_by_ip(self, ip: str) -> Optional[Host]:
        return self._by_ip.get(ip)

    def rtt(self, a: str, b: str) -> float:
        profile = self._links[tuple(sorted((a, b)))]
        return profile.delay_ab_ms + profile.delay_ba_ms

    # clock

    def call_later(self, delay_ms: float, callback: Callable[[], None], daemon: bool = False) -> Timer:
        return self.call_at(self.now + max(0.0, delay_ms), callback, daemon=daemon)

    def call_at(self, when: float, callback: Callable[[], None], daemon: bool = False) -> Timer:
        timer = Timer(self, max(when, self.now), callback, daemon)
        if not daemon:
            self._live += 1
        heapq.heappush(self._queue, (timer.time, next(self._seq), timer))
        return timer

    def run_until_quiescent(self, deadline_ms: Optional[float] = None) -> Trace:
        """Fire events in (time, insertion) order until only daemon timers remain.

        If ``deadline_ms`` is reached first the trace is returned with
        ``quiescent=False`` and the number of pending events recorded.
        """
        while self._queue and self._live > 0:
            when, _, timer = self._queue[0]
            if deadline_ms is not None and when > deadline_ms:
                self.now = max(self.now, deadline_ms)
                self.trace.quiescent = False
                self.trace.pending_events = self._live
                logger.warning("deadline %.3f ms hit with %d pending events", deadline_ms, self._live)
                return self.trace
            heapq.heappop(self._queue)
            if timer.cancelled:
                continue
            if not timer.daemon:
                self._live -= 1
            timer.cancelled = True
            self.now = when
            timer.callback()
        self.trace.quiescent = True
        self.trace.pending_events = 0
        return self.trace

    def run_for(self, duration_ms: float) -> Trace:
        """Advance the clock by ``duration_ms`` firing daemon timers too."""
        end = self.now + duration_ms
        while self._queue and self._queue[0][0] <= end:
            when, _, timer = heapq.heappop(self._queue)
            if timer.cancelled:
                continue
            if not timer.daemon:
                self._live -= 1
            timer.cancelled = True
            self.now = when
            timer.callback()
        self.now = end
        return self.trace

    # transport

    def _path(self, sender: Host, dst_ip: str) -> Tuple[Optional[Host], Optional[LinkProfile]]:
        target = self._by_ip.get(dst_ip)
        if target is None or target is sender:
            return target, None
        return target, self._links.get(tuple(sorted((sender.name, target.name))))

    def _record(self, kind, did, sender, src, dst, data, tag, reason="") -> None:
        self.trace.append(TraceEvent(self.now, kind, did, sender.name, src, dst, len(data), tag, reason, data))

    def _transmit(self, sender: Host, src: Address, dst: Address, data: bytes, kind: str, sock) -> None:
        did = next(self._datagram_ids)
        tag = self.classifier(data)
        self._record("send", did, sender, src, dst, data, tag)
        target, link = self._path(sender, dst[0])
        if target is None or (target is not sender and link is None):
            self._record("drop", did, sender, src, dst, data, tag, "unreachable")
            return
        delay = 0.0
        if link is not None:
            if link.loss_rate > 0 and self._loss_rng[link.link_id].random() < link.loss_rate:
                self._record("drop", did, sender, src, dst, data, tag, "loss")
                return
            delay = link.delay_from(sender.name)

        def deliver():
            receiver = target._sockets.get(dst)
            if receiver is None or receiver.closed:
                self._record("drop", did, sender, src, dst, data, tag, "port-unreachable")
                return
            self._record("deliver", did, sender, src, dst, data, tag)
            receiver._deliver(data, src)

        self.call_later(delay, deliver)

    def _segment_delay(self, sender: Host, dst_ip: str) -> Optional[float]:
        target, link = self._path(sender, dst_ip)
        if target is None or (target is not sender and link is None):
            return None
        return 0.0 if link is None else link.delay_from(sender.name)

    def _send_segment(self, sender: Host, src: Address, dst: Address, tag: str, data: bytes, on_arrival) -> None:
        # streams are reliable: loss never applies to segments
        did = next(self._datagram_ids)
        self._record("send", did, sender, src, dst, data, tag)
        delay = self._segment_delay(sender, dst[0])
        if delay is None:
            self._record("drop", did, sender, src, dst, data, tag, "unreachable")
            return

        def arrive():
            self._record("deliver", did, sender, src, dst, data, tag)
            on_arrival()

        self.call_later(delay, arrive)

    def _syn(self, stream: SimStream, on_connected, on_error) -> None:
        sender = stream.host

        def fail(reason: str) -> None:
            stream.closed = True
            sender._streams.discard(stream)
            if on_error is not None:
                on_error(ConnectionRefusedError(reason))

        if self._segment_delay(sender, stream.peer_address[0]) is None:
            self._send_segment(sender, stream.local_address, stream.peer_address, "tcp-syn", b"", lambda: None)
            self.call_later(0, lambda: fail("unreachable"))
            return

        def at_server():
            target = self._by_ip[stream.peer_address[0]]
            listener = target._listeners.get(stream.peer_address)
            if listener is None:
                self._send_segment(target, stream.peer_address, stream.local_address, "tcp-rst", b"", lambda: fail("refused"))
                return
            server_end = SimStream(target, stream.peer_address, stream.local_address)
            server_end.remote = stream
            stream.remote = server_end
            target._streams.add(server_end)

            def at_client():
                on_connected(stream)

            self._send_segment(target, stream.peer_address, stream.local_address, "tcp-synack", b"", at_client)
            listener.on_accept(server_end)

        self._send_segment(sender, stream.local_address, stream.peer_address, "tcp-syn", b"", at_server)

    def _segment(self, stream: SimStream, tag: str, data: bytes) -> None:
        remote = stream.remote
        if remote is None:
            return
        if tag == "tcp-fin":
            self._send_segment(stream.host, stream.local_address, stream.peer_address, tag, data, remote._remote_closed)
        else:
            self._send_segment(stream.host, stream.local_address, stream.peer_address, tag, data, lambda: remote._receive(data))


# Every network ever built, so test harnesses can audit all traces.
_OBSERVERS: List[Callable[[Network], None]] = []


def _register(net: Network) -> None:
    for observer in _OBSERVERS:
        observer(net)


def add_network_observer(callback: Callable[[Network], None]) -> Callable[[], None]:
    _OBSERVERS.append(callback)
    return lambda: _OBSERVERS.remove(callback)


def check_no_spoofing(trace: Iterable[TraceEvent], network: Network) -> List[TraceEvent]:
    """Return sends whose source address does not belong to the sending host."""
    return [
        e for e in trace if e.kind == "send" and network.hosts[e.sender].ip != e.src[0]
    ]
