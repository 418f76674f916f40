"""Relay logic of the proxy, free of I/O.

Inputs are datagrams and resolution results; outputs are action objects the
daemon executes. The only protocol knowledge used is the packet header (type
and connection IDs) and the token splice; nothing here can derive keys.
"""
import enum
import ipaddress
import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple, Union

from ..miniquic.packet import PacketDecodeError, PacketType, peek_header, with_token
from ..socks import SocksAddress, SocksError, decode_udp_header, encapsulate

logger = logging.getLogger("quicsocks.proxy")

Address = Tuple[str, int]
DEFAULT_MAX_RELAYS = 4096
DEFAULT_IDLE_TIMEOUT_MS = 30_000.0


class NotifyMode(str, enum.Enum):
    EARLY = "early"
    ON_FIRST_RESPONSE = "on-first-response"


class RelayState(enum.IntEnum):
    RESOLVING = 0
    FORWARDED = 1
    RETRY_REPLAYED = 2
    RELAYING = 3
    DRAINED = 4


@dataclass
class Metrics:
    relays_created: int = 0
    dns_timeouts: int = 0
    retries_replayed: int = 0
    dropped_auth: int = 0
    dropped_malformed: int = 0
    dropped_relay_cap: int = 0
    relays_drained: int = 0

    def snapshot(self) -> Dict[str, int]:
        return dict(self.__dict__)


# actions


@dataclass(frozen=True)
class SendToClient:
    assoc_id: int
    data: bytes
    addr: Address


@dataclass(frozen=True)
class SendToServer:
    assoc_id: int
    data: bytes
    addr: Address


@dataclass(frozen=True)
class Resolve:
    relay_key: Tuple[int, bytes]
    name: str


@dataclass(frozen=True)
class ControlError:
    assoc_id: int
    record: Dict[str, str]

    def line(self) -> bytes:
        return (json.dumps(self.record, sort_keys=True) + "\n").encode()


Action = Union[SendToClient, SendToServer, Resolve, ControlError]


@dataclass
class Relay:
    assoc_id: int
    client_dcid: bytes
    client_scid: bytes
    server_name: str
    server_port: int
    cached_initial: Optional[bytes]
    state: RelayState = RelayState.RESOLVING
    resolved: Optional[Address] = None
    token: bytes = b""
    server_cid: Optional[bytes] = None
    last_activity: float = 0.0

    @property
    def key(self) -> Tuple[int, bytes]:
        return (self.assoc_id, self.client_dcid)


@dataclass
class Association:
    assoc_id: int
    client_ip: str
    created_at: float
    client_addr: Optional[Address] = None  # last-seen source of relayed datagrams
    relays: Set[bytes] = field(default_factory=set)
    peers: Set[Address] = field(default_factory=set)


@dataclass(frozen=True)
class ResolveOk:
    addresses: Tuple[str, ...]


@dataclass(frozen=True)
class ResolveFailed:
    reason: str  # "nxdomain" | "resolution-timeout" | other resolver failure


class ProxyCore:
    def __init__(
        self,
        *,
        notify: NotifyMode = NotifyMode.EARLY,
        max_relays: int = DEFAULT_MAX_RELAYS,
        idle_timeout_ms: float = DEFAULT_IDLE_TIMEOUT_MS,
        own_addresses: Tuple[str, ...] = (),
    ) -> None:
        self.notify = NotifyMode(notify)
        self.max_relays = max_relays
        self.idle_timeout_ms = idle_timeout_ms
        self.own_addresses = set(own_addresses)
        self.metrics = Metrics()
        self.associations: Dict[int, Association] = {}
        self.relays: Dict[Tuple[int, bytes], Relay] = {}
        self._by_client_scid: Dict[Tuple[int, bytes], Relay] = {}
        self._by_server_cid: Dict[Tuple[int, bytes], Relay] = {}

    # associations

    def open_association(self, assoc_id: int, client_ip: str, now: float) -> Association:
        assoc = Association(assoc_id, str(ipaddress.ip_address(client_ip)), now)
        self.associations[assoc_id] = assoc
        return assoc

    def close_association(self, assoc_id: int) -> None:
        assoc = self.associations.pop(assoc_id, None)
        if assoc is None:
            return
        for dcid in list(assoc.relays):
            self._drop_relay(self.relays.get((assoc_id, dcid)))

    def _drop_relay(self, relay: Optional[Relay]) -> None:
        if relay is None:
            return
        relay.state = RelayState.DRAINED
        relay.cached_initial = None
        self.relays.pop(relay.key, None)
        self._by_client_scid.pop((relay.assoc_id, relay.client_scid), None)
        if relay.server_cid is not None:
            self._by_server_cid.pop((relay.assoc_id, relay.server_cid), None)
        assoc = self.associations.get(relay.assoc_id)
        if assoc is not None:
            assoc.relays.discard(relay.client_dcid)

    # client side

    def on_client_datagram(self, assoc_id: int, datagram: bytes, src: Address, now: float) -> List[Action]:
        assoc = self.associations.get(assoc_id)
        if assoc is None:
            return []
        if _ip(src[0]) != assoc.client_ip:
            self.metrics.dropped_auth += 1
            logger.debug("association %d: datagram from %s rejected", assoc_id, src)
            return []
        try:
            header, payload = decode_udp_header(datagram)
        except SocksError as exc:
            self.metrics.dropped_malformed += 1
            logger.debug("association %d: bad socks header: %s", assoc_id, exc)
            return []
        if not payload:
            self.metrics.dropped_malformed += 1
            return []
        assoc.client_addr = (src[0], src[1])
        dst = header.dst
        if not dst.is_domain:
            target = (_ip(dst.host), dst.port)
            assoc.peers.add(target)
            self._touch_by_dcid(assoc_id, payload, now)
            return [SendToServer(assoc_id, payload, target)]
        try:
            pkt = peek_header(payload)
        except PacketDecodeError:
            self.metrics.dropped_malformed += 1
            return []
        if pkt.type == PacketType.INITIAL:
            return self._client_initial(assoc, pkt.dcid, pkt.scid, dst, payload, now)
        relay = self._by_server_cid.get((assoc_id, pkt.dcid))
        if relay is None or relay.resolved is None:
            self.metrics.dropped_malformed += 1
            return []
        relay.last_activity = now
        return [SendToServer(assoc_id, payload, relay.resolved)]

    def _client_initial(self, assoc, dcid, scid, dst: SocksAddress, payload, now) -> List[Action]:
        key = (assoc.assoc_id, dcid)
        relay = self.relays.get(key)
        if relay is not None:
            relay.last_activity = now
            if relay.state == RelayState.RESOLVING:
                # client retransmit: keep the newest bytes, no second lookup
                relay.cached_initial = payload
                return []
            if relay.resolved is None:
                return []
            data = with_token(payload, relay.token) if relay.token else payload
            if relay.state < RelayState.RELAYING:
                relay.cached_initial = payload
            return [SendToServer(assoc.assoc_id, data, relay.resolved)]
        if len(self.relays) >= self.max_relays:
            self.metrics.dropped_relay_cap += 1
            logger.warning("relay table full (%d); dropping INITIAL", self.max_relays)
            return []
        relay = Relay(assoc.assoc_id, dcid, scid, dst.host, dst.port, payload, last_activity=now)
        self.relays[key] = relay
        self._by_client_scid[(assoc.assoc_id, scid)] = relay
        assoc.relays.add(dcid)
        self.metrics.relays_created += 1
        return [Resolve(key, dst.host)]

    def _touch_by_dcid(self, assoc_id: int, payload: bytes, now: float) -> None:
        try:
            pkt = peek_header(payload)
        except PacketDecodeError:
            return
        relay = self._by_server_cid.get((assoc_id, pkt.dcid)) or self.relays.get((assoc_id, pkt.dcid))
        if relay is not None:
            relay.last_activity = now

    # resolution

    def on_resolution(self, relay_key: Tuple[int, bytes], result: Union[ResolveOk, ResolveFailed], now: float) -> List[Action]:
        relay = self.relays.get(relay_key)
        if relay is None or relay.state != RelayState.RESOLVING:
            return []
        assoc = self.associations[relay.assoc_id]
        if isinstance(result, ResolveFailed):
            if result.reason == "resolution-timeout":
                self.metrics.dns_timeouts += 1
            self._drop_relay(relay)
            record = {"error": result.reason, "name": relay.server_name, "dcid": relay.client_dcid.hex()}
            return [ControlError(assoc.assoc_id, record)]
        address = (_ip(result.addresses[0]), relay.server_port)
        if address[0] in self.own_addresses:
            logger.info("%s resolves to the proxy itself; forwarding anyway", relay.server_name)
        relay.resolved = address
        relay.state = RelayState.FORWARDED
        relay.last_activity = now
        assoc.peers.add(address)
        actions: List[Action] = [SendToServer(assoc.assoc_id, relay.cached_initial, address)]
        if self.notify == NotifyMode.EARLY and assoc.client_addr is not None:
            note = encapsulate(SocksAddress.from_ip(address[0], address[1]), b"")
            actions.append(SendToClient(assoc.assoc_id, note, assoc.client_addr))
        return actions

    # server side

    def on_server_datagram(self, assoc_id: int, datagram: bytes, src: Address, now: float) -> List[Action]:
        assoc = self.associations.get(assoc_id)
        src = (_ip(src[0]), src[1])
        if assoc is None or src not in assoc.peers or assoc.client_addr is None:
            return []
        relay = None
        try:
            pkt = peek_header(datagram)
        except PacketDecodeError:
            pkt = None
        if pkt is not None:
            relay = self._by_client_scid.get((assoc_id, pkt.dcid))
        if pkt is not None and pkt.type == PacketType.RETRY:
            if relay is None or relay.state != RelayState.FORWARDED or relay.resolved != src or not pkt.token:
                logger.debug("association %d: unexpected RETRY from %s dropped", assoc_id, src)
                return []
            relay.token = pkt.token
            relay.state = RelayState.RETRY_REPLAYED
            relay.last_activity = now
            self.metrics.retries_replayed += 1
            return [SendToServer(assoc_id, with_token(relay.cached_initial, pkt.token), src)]
        if relay is not None:
            relay.last_activity = now
            if relay.state < RelayState.RELAYING:
                relay.state = RelayState.RELAYING
                relay.cached_initial = None
            if relay.server_cid is None and pkt.scid:
                relay.server_cid = pkt.scid
                self._by_server_cid[(assoc_id, pkt.scid)] = relay
        wrapped = encapsulate(SocksAddress.from_ip(src[0], src[1]), datagram)
        return [SendToClient(assoc_id, wrapped, assoc.client_addr)]

    # housekeeping

    def idle_reaper(self, now: float) -> List[Relay]:
        expired = [r for r in self.relays.values() if now - r.last_activity > self.idle_timeout_ms]
        for relay in expired:
            self._drop_relay(relay)
        self.metrics.relays_drained += len(expired)
        return expired


def _ip(text: str) -> str:
    """Canonical text form; IPv4-mapped IPv6 addresses are unwrapped."""
    addr = ipaddress.ip_address(text.split("%", 1)[0])
    if isinstance(addr, ipaddress.IPv6Address) and addr.ipv4_mapped is not None:
        addr = addr.ipv4_mapped
    return str(addr)
