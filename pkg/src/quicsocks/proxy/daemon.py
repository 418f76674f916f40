"""The proxy daemon: control-channel handling and socket plumbing around :class:`ProxyCore`."""
import itertools
import json
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

from ..dnskit.stub import NxDomain, Resolution, ResolutionTimeout, StubResolver
from ..socks import SocksAddress, ServerNegotiation
from .core import (
    DEFAULT_IDLE_TIMEOUT_MS,
    DEFAULT_MAX_RELAYS,
    ControlError,
    NotifyMode,
    ProxyCore,
    Resolve,
    ResolveFailed,
    ResolveOk,
    SendToClient,
    SendToServer,
)

logger = logging.getLogger("quicsocks.proxy")

Address = Tuple[str, int]
REAP_INTERVAL_MS = 1000.0


@dataclass
class _AssocIO:
    control: object
    negotiation: ServerNegotiation
    relay_socket: object
    outbound_socket: object
    active: bool = False


class ProxyDaemon:
    """Runs on any runtime (real sockets or the simulator).

    Each association gets two UDP sockets: the relay socket announced to the
    client and an outbound socket whose address every server sees.
    """

    def __init__(
        self,
        runtime,
        *,
        upstream_dns: Address,
        listen_control: Optional[Address] = None,
        relay_host: Optional[str] = None,
        relay_base_port: int = 0,
        notify: NotifyMode = NotifyMode.EARLY,
        idle_timeout_ms: float = DEFAULT_IDLE_TIMEOUT_MS,
        max_relays: int = DEFAULT_MAX_RELAYS,
        dns_timeout_ms: float = 1000.0,
        dns_retries: int = 2,
        dns_cache: bool = True,
    ) -> None:
        self.runtime = runtime
        listen_control = listen_control or ("0.0.0.0", 1080)
        self.listener = runtime.listen_tcp(listen_control, self._on_accept)
        self.control_address = self.listener.local_address
        self.relay_host = relay_host or self.control_address[0]
        self._next_relay_port = relay_base_port
        self.core = ProxyCore(
            notify=notify,
            max_relays=max_relays,
            idle_timeout_ms=idle_timeout_ms,
            own_addresses=(self.relay_host,),
        )
        self.stub = StubResolver(
            runtime, upstream_dns, timeout_ms=dns_timeout_ms, retries=dns_retries, cache=dns_cache, bind=(self.relay_host, 0)
        )
        self._ids = itertools.count(1)
        self._io: Dict[int, _AssocIO] = {}
        self._reaper = runtime.call_later(REAP_INTERVAL_MS, self._reap, daemon=True)
        self.closed = False

    @property
    def metrics(self):
        return self.core.metrics

    # control channel

    def _bind_relay(self, on_datagram):
        if self._next_relay_port:
            port = self._next_relay_port
            self._next_relay_port += 1
        else:
            port = 0
        return self.runtime.bind_udp((self.relay_host, port), on_datagram)

    def _on_accept(self, stream) -> None:
        assoc_id = next(self._ids)
        relay_sock = self._bind_relay(lambda data, src: self._on_client_datagram(assoc_id, data, src))
        out_sock = self.runtime.bind_udp((self.relay_host, 0), lambda data, src: self._on_server_datagram(assoc_id, data, src))
        bound = SocksAddress.from_ip(*relay_sock.local_address)
        io = _AssocIO(stream, ServerNegotiation(bound), relay_sock, out_sock)
        self._io[assoc_id] = io
        stream.set_handlers(lambda data: self._on_control_data(assoc_id, data), lambda: self._on_control_closed(assoc_id))

    def _on_control_data(self, assoc_id: int, data: bytes) -> None:
        io = self._io.get(assoc_id)
        if io is None:
            return
        reply = io.negotiation.feed(data)
        if reply:
            io.control.write(reply)
        if io.negotiation.error is not None:
            logger.info("association %d refused: %s", assoc_id, io.negotiation.error)
            self._teardown(assoc_id)
            io.control.close()
        elif io.negotiation.association is not None and not io.active:
            io.active = True
            self.core.open_association(assoc_id, io.control.peer_address[0], self.runtime.now())
            logger.debug("association %d open for %s relay %s", assoc_id, io.control.peer_address, io.relay_socket.local_address)

    def _on_control_closed(self, assoc_id: int) -> None:
        io = self._io.get(assoc_id)
        if io is not None:
            io.negotiation.stream_closed()
        self._teardown(assoc_id)

    def _teardown(self, assoc_id: int) -> None:
        io = self._io.pop(assoc_id, None)
        if io is None:
            return
        self.core.close_association(assoc_id)
        io.relay_socket.close()
        io.outbound_socket.close()

    # datagrams

    def _on_client_datagram(self, assoc_id: int, data: bytes, src: Address) -> None:
        self._execute(self.core.on_client_datagram(assoc_id, data, src, self.runtime.now()))

    def _on_server_datagram(self, assoc_id: int, data: bytes, src: Address) -> None:
        self._execute(self.core.on_server_datagram(assoc_id, data, src, self.runtime.now()))

    def _execute(self, actions) -> None:
        for action in actions:
            if isinstance(action, Resolve):
                self.stub.resolve(action.name, lambda result, key=action.relay_key: self._on_resolved(key, result))
                continue
            io = self._io.get(action.assoc_id)
            if io is None:
                continue
            if isinstance(action, SendToServer):
                io.outbound_socket.sendto(action.data, action.addr)
            elif isinstance(action, SendToClient):
                io.relay_socket.sendto(action.data, action.addr)
            elif isinstance(action, ControlError):
                io.control.write(action.line())

    def _on_resolved(self, relay_key, result) -> None:
        if isinstance(result, Resolution):
            outcome = ResolveOk(result.addresses)
        elif isinstance(result, ResolutionTimeout):
            outcome = ResolveFailed("resolution-timeout")
        elif isinstance(result, NxDomain):
            outcome = ResolveFailed("nxdomain")
        else:
            outcome = ResolveFailed(str(result).split(":", 1)[0])
        self._execute(self.core.on_resolution(relay_key, outcome, self.runtime.now()))

    # housekeeping

    def _reap(self) -> None:
        if self.closed:
            return
        expired = self.core.idle_reaper(self.runtime.now())
        if expired:
            logger.debug("reaped %d idle relays", len(expired))
        self._reaper = self.runtime.call_later(REAP_INTERVAL_MS, self._reap, daemon=True)

    def metrics_json(self) -> str:
        m = self.core.metrics
        keys = ("relays_created", "dns_timeouts", "retries_replayed", "dropped_auth", "dropped_malformed")
        return json.dumps({k: getattr(m, k) for k in keys}, sort_keys=True)

    def close(self) -> None:
        self.closed = True
        self._reaper.cancel()
        for assoc_id in list(self._io):
            io = self._io[assoc_id]
            self._teardown(assoc_id)
            io.control.close()
        self.listener.close()
        self.stub.close()
