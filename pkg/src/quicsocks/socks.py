# RFC 1928 subset: method negotiation, UDP ASSOCIATE and the UDP request header.
#
# udp request header
# +----+------+------+----------+----------+----------+
# |RSV | FRAG | ATYP | DST.ADDR | DST.PORT |   DATA   |
# +----+------+------+----------+----------+----------+
# | 2  |  1   |  1   | Variable |    2     | Variable |
# +----+------+------+----------+----------+----------+
#
# request / reply
# +----+-----+-------+------+----------+----------+
# |VER | CMD |  RSV  | ATYP | DST.ADDR | DST.PORT |
# +----+-----+-------+------+----------+----------+
# | 1  |  1  | X'00' |  1   | Variable |    2     |
# +----+-----+-------+------+----------+----------+
import enum
import ipaddress
import struct
from dataclasses import dataclass
from typing import Optional, Tuple

SOCKS_VERSION = 5
DEFAULT_PORT = 1080


class SocksError(ValueError):
    """Raised on malformed or unsupported SOCKS data.

    ``field`` names the offending wire field when the error comes from decoding.
    """

    def __init__(self, message: str, field: Optional[str] = None) -> None:
        super().__init__(message)
        self.field = field


class AddressType(enum.IntEnum):
    IPV4 = 0x01
    DOMAIN = 0x03
    IPV6 = 0x04


class Method(enum.IntEnum):
    NO_AUTH = 0x00
    GSSAPI = 0x01
    USER_PASS = 0x02
    NO_ACCEPTABLE = 0xFF


class Command(enum.IntEnum):
    CONNECT = 0x01
    BIND = 0x02
    UDP_ASSOCIATE = 0x03


class Reply(enum.IntEnum):
    SUCCEEDED = 0x00
    GENERAL_FAILURE = 0x01
    NOT_ALLOWED = 0x02
    NETWORK_UNREACHABLE = 0x03
    HOST_UNREACHABLE = 0x04
    CONNECTION_REFUSED = 0x05
    TTL_EXPIRED = 0x06
    COMMAND_NOT_SUPPORTED = 0x07
    ADDRESS_TYPE_NOT_SUPPORTED = 0x08


@dataclass(frozen=True)
class SocksAddress:
    """A SOCKS destination: IPv4/IPv6 literal or domain name, plus port.

    IP hosts are kept in canonical text form. Domain names are text; bytes that
    are not valid UTF-8 survive a decode/encode cycle via surrogateescape.
    """

    kind: AddressType
    host: str
    port: int

    def __post_init__(self) -> None:
        if not 0 <= self.port <= 0xFFFF:
            raise SocksError(f"port out of range: {self.port}", "port")
        if self.kind == AddressType.DOMAIN:
            raw = _domain_bytes(self.host)
            if not 1 <= len(raw) <= 255:
                raise SocksError("domain name must be 1..255 bytes", "addr")
            if b"\x00" in raw:
                raise SocksError("domain name contains NUL", "addr")
        elif self.kind == AddressType.IPV4:
            object.__setattr__(self, "host", str(ipaddress.IPv4Address(self.host)))
        elif self.kind == AddressType.IPV6:
            object.__setattr__(self, "host", str(ipaddress.IPv6Address(self.host)))
        else:  # pragma: no cover - enum exhausts kinds
            raise SocksError(f"unknown address kind {self.kind!r}", "atyp")

    @classmethod
    def domain(cls, name: str, port: int) -> "SocksAddress":
        return cls(AddressType.DOMAIN, name, port)

    @classmethod
    def from_ip(cls, host: str, port: int) -> "SocksAddress":
        ip = ipaddress.ip_address(host)
        kind = AddressType.IPV4 if ip.version == 4 else AddressType.IPV6
        return cls(kind, str(ip), port)

    @property
    def is_domain(self) -> bool:
        return self.kind == AddressType.DOMAIN

    def as_tuple(self) -> Tuple[str, int]:
        return (self.host, self.port)

    def encode(self) -> bytes:
        if self.kind == AddressType.IPV4:
            body = ipaddress.IPv4Address(self.host).packed
        elif self.kind == AddressType.IPV6:
            body = ipaddress.IPv6Address(self.host).packed
        else:
            raw = _domain_bytes(self.host)
            body = bytes([len(raw)]) + raw
        return bytes([self.kind]) + body + struct.pack("!H", self.port)


def _domain_bytes(name: str) -> bytes:
    return name.encode("utf-8", "surrogateescape")


def decode_address(data: bytes, offset: int = 0) -> Tuple[SocksAddress, int]:
    """Decode ATYP|ADDR|PORT starting at ``offset``; return the address and the end offset."""
    if offset >= len(data):
        raise SocksError("truncated before address type", "atyp")
    atyp = data[offset]
    pos = offset + 1
    if atyp == AddressType.IPV4:
        end = pos + 4
        if end + 2 > len(data):
            raise SocksError("truncated IPv4 address", "addr")
        host = str(ipaddress.IPv4Address(data[pos:end]))
        kind = AddressType.IPV4
    elif atyp == AddressType.IPV6:
        end = pos + 16
        if end + 2 > len(data):
            raise SocksError("truncated IPv6 address", "addr")
        host = str(ipaddress.IPv6Address(data[pos:end]))
        kind = AddressType.IPV6
    elif atyp == AddressType.DOMAIN:
        if pos >= len(data):
            raise SocksError("truncated domain length", "addr")
        length = data[pos]
        pos += 1
        end = pos + length
        if length == 0:
            raise SocksError("empty domain name", "addr")
        if end + 2 > len(data):
            raise SocksError("truncated domain name", "addr")
        raw = data[pos:end]
        if b"\x00" in raw:
            raise SocksError("domain name contains NUL", "addr")
        host = raw.decode("utf-8", "surrogateescape")
        kind = AddressType.DOMAIN
    else:
        raise SocksError(f"unknown address type 0x{atyp:02x}", "atyp")
    (port,) = struct.unpack_from("!H", data, end)
    return SocksAddress(kind, host, port), end + 2


@dataclass(frozen=True)
class SocksUdpHeader:
    dst: SocksAddress
    rsv: int = 0
    frag: int = 0

    def __len__(self) -> int:
        return 3 + len(self.dst.encode())


def encode_udp_header(dst: SocksAddress) -> bytes:
    return b"\x00\x00\x00" + dst.encode()


def decode_udp_header(datagram: bytes) -> Tuple[SocksUdpHeader, bytes]:
    """Split a relayed datagram into its SOCKS header and payload."""
    if len(datagram) < 4:
        raise SocksError("datagram shorter than minimum header", "rsv")
    if datagram[0] != 0 or datagram[1] != 0:
        raise SocksError("reserved bytes must be zero", "rsv")
    if datagram[2] != 0:
        raise SocksError("fragmentation unsupported", "frag")
    dst, end = decode_address(datagram, 3)
    return SocksUdpHeader(dst=dst), datagram[end:]


def encapsulate(dst: SocksAddress, payload: bytes) -> bytes:
    return encode_udp_header(dst) + payload


# control channel messages


def encode_greeting(methods=(Method.NO_AUTH,)) -> bytes:
    return bytes([SOCKS_VERSION, len(methods), *methods])


def encode_method_selection(method: int) -> bytes:
    return bytes([SOCKS_VERSION, method])


def encode_request(command: int, addr: SocksAddress) -> bytes:
    return bytes([SOCKS_VERSION, command, 0]) + addr.encode()


def encode_reply(reply: int, bound: SocksAddress) -> bytes:
    return bytes([SOCKS_VERSION, reply, 0]) + bound.encode()


ANY_V4 = SocksAddress(AddressType.IPV4, "0.0.0.0", 0)


@dataclass(frozen=True)
class ControlRequest:
    command: int
    addr: SocksAddress
    version: int = SOCKS_VERSION


@dataclass(frozen=True)
class ControlReply:
    reply: int
    bound: SocksAddress
    version: int = SOCKS_VERSION


def _decode_control(data: bytes) -> Optional[Tuple[int, int, SocksAddress, int]]:
    """Parse VER|CODE|RSV|ADDR; None when more bytes are needed."""
    if len(data) < 4:
        return None
    atyp = data[3]
    if atyp == AddressType.IPV4:
        need = 4 + 4 + 2
    elif atyp == AddressType.IPV6:
        need = 4 + 16 + 2
    elif atyp == AddressType.DOMAIN:
        if len(data) < 5:
            return None
        need = 5 + data[4] + 2
    else:
        raise SocksError(f"unknown address type 0x{atyp:02x}", "atyp")
    if len(data) < need:
        return None
    addr, end = decode_address(data, 3)
    return data[0], data[1], addr, end


class AssociationError(Exception):
    """UDP ASSOCIATE negotiation failed or the association is no longer valid."""

    def __init__(self, message: str, code: Optional[int] = None) -> None:
        super().__init__(message)
        self.code = code


class UdpAssociation:
    """Handle for a negotiated UDP relay; valid only while its control stream is open."""

    def __init__(self, relay: SocksAddress, client_declared: Optional[SocksAddress] = None) -> None:
        self.relay = relay
        self.client_declared = client_declared
        self._open = True

    @property
    def valid(self) -> bool:
        return self._open

    def invalidate(self) -> None:
        self._open = False

    def require_valid(self) -> None:
        if not self._open:
            raise AssociationError("control stream closed; association is gone")

    def __repr__(self) -> str:
        state = "open" if self._open else "closed"
        return f"<UdpAssociation relay={self.relay.host}:{self.relay.port} {state}>"


class _Negotiation:
    def __init__(self) -> None:
        self._buf = b""
        self.association: Optional[UdpAssociation] = None
        self.error: Optional[AssociationError] = None

    @property
    def done(self) -> bool:
        return self.association is not None or self.error is not None

    def stream_closed(self) -> None:
        if self.association is not None:
            self.association.invalidate()
        elif self.error is None:
            self.error = AssociationError("control stream closed during negotiation")

    def _fail(self, message: str, code: Optional[int] = None) -> None:
        self.error = AssociationError(message, code)


class ClientNegotiation(_Negotiation):
    """Client side of NO-AUTH + UDP ASSOCIATE, driven by bytes in / bytes out.

    ``start()`` returns the greeting. Feed every received chunk to ``feed()`` and
    write whatever it returns. ``proxy_host`` replaces an unspecified bound address.
    """

    def __init__(self, proxy_host: str, declared: SocksAddress = ANY_V4) -> None:
        super().__init__()
        self.proxy_host = proxy_host
        self.declared = declared
        self._stage = "method"

    def start(self) -> bytes:
        return encode_greeting()

    def feed(self, data: bytes) -> bytes:
        if self.done:
            return b""
        self._buf += data
        out = b""
        if self._stage == "method":
            if len(self._buf) < 2:
                return out
            ver, method = self._buf[0], self._buf[1]
            self._buf = self._buf[2:]
            if ver != SOCKS_VERSION:
                self._fail(f"version mismatch: {ver}")
                return out
            if method != Method.NO_AUTH:
                self._fail(f"proxy selected unsupported method 0x{method:02x}", method)
                return out
            self._stage = "reply"
            out += encode_request(Command.UDP_ASSOCIATE, self.declared)
        if self._stage == "reply":
            try:
                parsed = _decode_control(self._buf)
            except SocksError as exc:
                self._fail(f"malformed reply: {exc}")
                return out
            if parsed is None:
                return out
            ver, rep, bound, end = parsed
            self._buf = self._buf[end:]
            if ver != SOCKS_VERSION:
                self._fail(f"version mismatch: {ver}")
            elif rep != Reply.SUCCEEDED:
                self._fail(f"associate refused with reply 0x{rep:02x}", rep)
            else:
                if bound.kind != AddressType.DOMAIN and ipaddress.ip_address(bound.host).is_unspecified:
                    bound = SocksAddress.from_ip(self.proxy_host, bound.port)
                self.association = UdpAssociation(bound)
                self._stage = "done"
        return out


class ServerNegotiation(_Negotiation):
    """Proxy side of the negotiation.

    ``relay`` is the address announced in a successful reply. The client's
    declared UDP source is recorded but not enforced.
    """

    def __init__(self, relay: SocksAddress) -> None:
        super().__init__()
        self.relay = relay
        self._stage = "greeting"

    def feed(self, data: bytes) -> bytes:
        if self.done:
            return b""
        self._buf += data
        out = b""
        if self._stage == "greeting":
            if len(self._buf) < 2:
                return out
            ver, nmethods = self._buf[0], self._buf[1]
            if ver != SOCKS_VERSION:
                self._fail(f"version mismatch: {ver}")
                return out
            if len(self._buf) < 2 + nmethods:
                return out
            methods = self._buf[2 : 2 + nmethods]
            self._buf = self._buf[2 + nmethods :]
            if Method.NO_AUTH not in methods:
                self._fail("no acceptable method", Method.NO_ACCEPTABLE)
                return encode_method_selection(Method.NO_ACCEPTABLE)
            out += encode_method_selection(Method.NO_AUTH)
            self._stage = "request"
        if self._stage == "request":
            if len(self._buf) >= 1 and self._buf[0] != SOCKS_VERSION:
                self._fail(f"version mismatch: {self._buf[0]}")
                return out
            try:
                parsed = _decode_control(self._buf)
            except SocksError as exc:
                self._fail(f"malformed request: {exc}", Reply.ADDRESS_TYPE_NOT_SUPPORTED)
                return out + encode_reply(Reply.ADDRESS_TYPE_NOT_SUPPORTED, ANY_V4)
            if parsed is None:
                return out
            _ver, cmd, declared, end = parsed
            self._buf = self._buf[end:]
            if cmd != Command.UDP_ASSOCIATE:
                self._fail(f"command 0x{cmd:02x} not supported", Reply.COMMAND_NOT_SUPPORTED)
                return out + encode_reply(Reply.COMMAND_NOT_SUPPORTED, ANY_V4)
            self.association = UdpAssociation(self.relay, declared)
            self._stage = "done"
            out += encode_reply(Reply.SUCCEEDED, self.relay)
        return out


def negotiate_association(role: str, **kwargs) -> _Negotiation:
    """Build the negotiation state machine for ``role`` ("client" or "server")."""
    if role == "client":
        return ClientNegotiation(**kwargs)
    if role == "server":
        return ServerNegotiation(**kwargs)
    raise ValueError(f"unknown role {role!r}")
