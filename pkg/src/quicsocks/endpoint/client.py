"""Client side: SOCKS association, proxied or direct handshake, optional migration."""
import enum
import ipaddress
import json
import logging
import os
from dataclasses import asdict, dataclass
from typing import Callable, List, Optional, Tuple

from ..dnskit.stub import Resolution, StubResolver
from ..miniquic import (
    AppDataReceived,
    ConnectionClosed,
    ConnectionConfig,
    HandshakeComplete,
    MigrationComplete,
    MigrationFailed,
    QuicConnection,
    RetryReceived,
)
from ..socks import AssociationError, ClientNegotiation, SocksAddress, SocksError, decode_udp_header, encapsulate

logger = logging.getLogger("quicsocks.client")

Address = Tuple[str, int]
PROXY_PATH = "proxy"
DIRECT_PATH = "direct"


class Mode(str, enum.Enum):
    DEFAULT = "default"
    COLD = "cold"
    WARM = "warm"


@dataclass
class ConnectConfig:
    target: str
    port: int
    mode: Mode = Mode.DEFAULT
    proxy: Optional[Address] = None
    resolver: Optional[Address] = None
    migration: bool = False
    probe_early: bool = False
    handshake_timeout_ms: float = 10_000.0

    def __post_init__(self) -> None:
        self.mode = Mode(self.mode)
        if self.mode in (Mode.COLD, Mode.WARM) and self.proxy is None:
            raise ValueError(f"mode {self.mode.value} needs a proxy")
        if self.mode == Mode.DEFAULT and self.resolver is None and not _is_ip(self.target):
            raise ValueError("default mode needs a resolver for a domain target")
        if not 0 < self.port <= 0xFFFF:
            raise ValueError("port out of range")


@dataclass
class TimingRecord:
    mode: str
    t_connect_ms: Optional[float]
    retry_occurred: bool = False
    migrated: bool = False
    t_migrate_ms: Optional[float] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _is_ip(text: str) -> bool:
    try:
        ipaddress.ip_address(text)
    except ValueError:
        return False
    return True


def _wildcard(addr: Address) -> Address:
    return ("::" if ":" in addr[0] else "0.0.0.0", 0)


class ProxyAssociation:
    """Client end of a UDP ASSOCIATE: control stream plus the local UDP socket.

    Datagrams arriving on the socket go to ``handler`` so one association can
    serve several sequential sessions.
    """

    def __init__(self, runtime, proxy: Address) -> None:
        self.runtime = runtime
        self.proxy = proxy
        self.control = None
        self.relay: Optional[Address] = None
        self.socket = None
        self.handler: Optional[Callable[[bytes, Address], None]] = None
        self.on_control_error: Optional[Callable[[dict], None]] = None
        self._negotiation: Optional[ClientNegotiation] = None
        self._buffer = b""
        self.closed = False

    def open(self, on_ready: Callable[["ProxyAssociation"], None], on_error: Callable[[Exception], None]) -> None:
        self._on_ready = on_ready
        self._on_error = on_error
        self.runtime.connect_tcp(self.proxy, self._connected, on_error)

    def _connected(self, stream) -> None:
        self.control = stream
        self._negotiation = ClientNegotiation(self.proxy[0])
        stream.set_handlers(self._on_data, self._on_closed)
        stream.write(self._negotiation.start())

    def _on_data(self, data: bytes) -> None:
        neg = self._negotiation
        if neg.association is not None:
            self._control_lines(data)
            return
        reply = neg.feed(data)
        if reply:
            self.control.write(reply)
        if neg.error is not None:
            self.control.close()
            self._on_error(neg.error)
        elif neg.association is not None:
            self.relay = neg.association.relay.as_tuple()
            self.socket = self.runtime.bind_udp(_wildcard(self.relay), self._on_datagram)
            self._on_ready(self)

    def _control_lines(self, data: bytes) -> None:
        self._buffer += data
        while b"\n" in self._buffer:
            line, self._buffer = self._buffer.split(b"\n", 1)
            try:
                record = json.loads(line)
            except ValueError:
                continue
            logger.info("proxy reported: %s", record)
            if self.on_control_error is not None:
                self.on_control_error(record)

    def _on_closed(self) -> None:
        if self._negotiation is not None:
            self._negotiation.stream_closed()
            if self._negotiation.association is None and not self.closed:
                self._on_error(self._negotiation.error or AssociationError("control stream closed"))
        self.close()

    def _on_datagram(self, data: bytes, src: Address) -> None:
        if self.handler is not None:
            self.handler(data, src)

    @property
    def valid(self) -> bool:
        neg = self._negotiation
        return not self.closed and neg is not None and neg.association is not None and neg.association.valid

    def send(self, dst: SocksAddress, payload: bytes) -> None:
        if not self.valid:
            raise AssociationError("association is not usable")
        self.socket.sendto(encapsulate(dst, payload), self.relay)

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        if self.socket is not None:
            self.socket.close()
        if self.control is not None:
            self.control.close()


class ClientSession:
    """One connection attempt; calls ``on_complete(record)`` exactly once.

    Completion happens at handshake completion, or, with migration enabled,
    once the migration succeeded or soft-failed.
    """

    def __init__(
        self,
        runtime,
        config: ConnectConfig,
        on_complete: Callable[[TimingRecord], None],
        *,
        association: Optional[ProxyAssociation] = None,
        rng: Callable[[int], bytes] = os.urandom,
    ) -> None:
        self.runtime = runtime
        self.config = config
        self._on_complete = on_complete
        self.association = association
        self._owns_association = association is None
        self._rng = rng
        self.conn = QuicConnection.client(
            config.target, rng=rng, config=ConnectionConfig(handshake_timeout_ms=config.handshake_timeout_ms)
        )
        self.server_address: Optional[Address] = None
        self.direct_socket = None
        self.stub: Optional[StubResolver] = None
        self.record = TimingRecord(config.mode.value, None)
        self.received: List[bytes] = []
        self.on_data: Optional[Callable[[bytes], None]] = None
        self._t0: Optional[float] = None
        self._handshake_done = False
        self._timer = None
        self._timer_at: Optional[float] = None
        self._finished = False
        self._reported = False
        self.closed = False

    # start-up

    def start(self) -> None:
        mode = self.config.mode
        if mode == Mode.DEFAULT:
            self._t0 = self.runtime.now()
            self._start_default()
        elif mode == Mode.COLD:
            self._t0 = self.runtime.now()
            self._ensure_association(self._start_proxied)
        else:
            self._ensure_association(self._start_warm)

    def _ensure_association(self, then: Callable[[], None]) -> None:
        if self.association is not None and self.association.valid:
            then()
            return
        self.association = ProxyAssociation(self.runtime, self.config.proxy)
        self._owns_association = True
        self.association.open(lambda _a: then(), lambda exc: self._fail(f"association-failure: {exc}"))

    def _start_warm(self) -> None:
        self._t0 = self.runtime.now()
        self._start_proxied()

    def _start_default(self) -> None:
        if _is_ip(self.config.target):
            self._begin_direct(self.config.target)
            return
        self.stub = StubResolver(self.runtime, self.config.resolver, bind=_wildcard(self.config.resolver), rng=_RandomFromBytes(self._rng))

        def resolved(result) -> None:
            self.stub.close()
            if isinstance(result, Resolution):
                self._begin_direct(result.addresses[0])
            else:
                self._fail(str(result))

        self.stub.resolve(self.config.target, resolved)

    def _begin_direct(self, ip: str) -> None:
        self.server_address = (ip, self.config.port)
        self._open_direct_socket()
        self.conn.connect(DIRECT_PATH, self.runtime.now())
        self._flush()

    def _start_proxied(self) -> None:
        self.association.handler = self._on_proxy_datagram
        self.association.on_control_error = self._on_control_error
        self.conn.connect(PROXY_PATH, self.runtime.now())
        self._flush()

    def _open_direct_socket(self) -> None:
        if self.direct_socket is None:
            self.direct_socket = self.runtime.bind_udp(_wildcard(self.server_address), self._on_direct_datagram)

    # input

    def _on_control_error(self, record: dict) -> None:
        if record.get("dcid") == self.conn.original_dcid.hex():
            self._fail(record.get("error", "proxy-error"))

    def _on_proxy_datagram(self, data: bytes, src: Address) -> None:
        if self.closed or src != self.association.relay:
            return
        try:
            header, payload = decode_udp_header(data)
        except SocksError:
            return
        if not header.dst.is_domain and self.server_address is None:
            self._learn_server_address(header.dst.as_tuple())
        if payload:
            self.conn.receive_datagram(payload, PROXY_PATH, self.runtime.now())
        self._flush()

    def _on_direct_datagram(self, data: bytes, src: Address) -> None:
        if self.closed or src != self.server_address:
            return
        self.conn.receive_datagram(data, DIRECT_PATH, self.runtime.now())
        self._flush()

    def _learn_server_address(self, addr: Address) -> None:
        self.server_address = addr
        if not self.config.migration:
            return
        self._open_direct_socket()
        if self.config.probe_early:
            self.conn.probe_path(DIRECT_PATH, self.runtime.now())
        if self._handshake_done:
            self.conn.migrate(DIRECT_PATH, self.runtime.now())

    def _on_timer(self) -> None:
        self._timer = None
        self._timer_at = None
        if not self.closed:
            self.conn.handle_timer(self.runtime.now())
            self._flush()

    # output and events

    def _send(self, data: bytes, path) -> None:
        if self.closed:
            return
        if path == PROXY_PATH:
            dst = (
                SocksAddress.from_ip(*self.server_address)
                if self.server_address is not None
                else SocksAddress.domain(self.config.target, self.config.port)
            )
            if self.association is not None and self.association.valid:
                self.association.send(dst, data)
        elif path == DIRECT_PATH and self.direct_socket is not None and self.server_address is not None:
            self.direct_socket.sendto(data, self.server_address)

    def _flush(self) -> None:
        if self.closed:
            return
        now = self.runtime.now()
        while True:
            ev = self.conn.next_event()
            if ev is None:
                break
            self._handle_event(ev, now)
        for data, path in self.conn.datagrams_to_send(now):
            self._send(data, path)
        self._arm_timer()
        self._deliver()

    def _handle_event(self, ev, now: float) -> None:
        if isinstance(ev, RetryReceived):
            self.record.retry_occurred = True
        elif isinstance(ev, HandshakeComplete):
            self._handshake_done = True
            self.record.t_connect_ms = now - self._t0
            if self.config.migration and self.config.mode != Mode.DEFAULT:
                if self.server_address is not None:
                    self.conn.migrate(DIRECT_PATH, now)
                # otherwise migration starts when the address is learned
            else:
                self._finish()
        elif isinstance(ev, MigrationComplete):
            self.record.migrated = True
            self.record.t_migrate_ms = now - self._t0
            self._finish()
        elif isinstance(ev, MigrationFailed):
            logger.info("direct path unusable; staying on the proxy")
            self._finish()
        elif isinstance(ev, ConnectionClosed):
            self._fail(ev.error)
        elif isinstance(ev, AppDataReceived):
            self.received.append(ev.data)
            if self.on_data is not None:
                self.on_data(ev.data)

    def _arm_timer(self) -> None:
        at = self.conn.get_timer()
        if at == self._timer_at:
            return
        if self._timer is not None:
            self._timer.cancel()
            self._timer = None
        self._timer_at = at
        if at is not None:
            self._timer = self.runtime.call_later(at - self.runtime.now(), self._on_timer)

    def _finish(self) -> None:
        # reported after the current flush so the datagrams it queued (such
        # as the client FIN) leave before the owner can close the session
        self._finished = True

    def _deliver(self) -> None:
        if self._finished and not self._reported:
            self._reported = True
            self._on_complete(self.record)

    def _fail(self, error: str) -> None:
        if self.record.error is None:
            self.record.error = error
        self._finish()
        self.close()
        self._deliver()

    # application API

    def send(self, data: bytes) -> None:
        self.conn.send_app_data(data, self.runtime.now())
        self._flush()

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        if self._timer is not None:
            self._timer.cancel()
        if self.direct_socket is not None:
            self.direct_socket.close()
        if self.stub is not None:
            self.stub.close()
        if self.association is not None:
            if self.association.handler == self._on_proxy_datagram:
                self.association.handler = None
            if self._owns_association:
                self.association.close()


class _RandomFromBytes:
    """Adapts a bytes source to the ``randrange`` the stub resolver needs."""

    def __init__(self, source: Callable[[int], bytes]) -> None:
        self._source = source

    def randrange(self, n: int) -> int:
        return int.from_bytes(self._source(4), "big") % n
