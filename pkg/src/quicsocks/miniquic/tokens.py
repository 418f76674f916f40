"""Stateless address-validation tokens.

Token layout: claimed_ip(16, IPv4 addresses in ::ffff: mapped form) claimed_port(2)
issued_at_ms(8) mac(32). The MAC is HMAC-SHA256 over the first 26 bytes, keyed
with a secret that lives as long as the server does.
"""
import enum
import hashlib
import hmac
import ipaddress
import struct
from dataclasses import dataclass
from typing import Tuple

from .packet import Packet, PacketType

TOKEN_LENGTH = 16 + 2 + 8 + 32
DEFAULT_FRESHNESS_MS = 30_000

Address = Tuple[str, int]


class TokenVerdict(enum.Enum):
    ACCEPT = "accept"
    BAD_MAC = "bad-mac"
    ADDRESS_MISMATCH = "address-mismatch"
    STALE = "stale"

    @property
    def accepted(self) -> bool:
        return self is TokenVerdict.ACCEPT


@dataclass(frozen=True)
class RetryToken:
    claimed_ip: bytes
    claimed_port: int
    issued_at_ms: int
    mac: bytes

    @property
    def address(self) -> Address:
        ip = ipaddress.IPv6Address(self.claimed_ip)
        host = ip.ipv4_mapped or ip
        return (str(host), self.claimed_port)

    def body(self) -> bytes:
        return self.claimed_ip + struct.pack("!HQ", self.claimed_port, self.issued_at_ms)

    def encode(self) -> bytes:
        return self.body() + self.mac

    @classmethod
    def decode(cls, data: bytes) -> "RetryToken":
        if len(data) != TOKEN_LENGTH:
            raise ValueError("token has wrong length")
        port, issued = struct.unpack_from("!HQ", data, 16)
        return cls(data[:16], port, issued, data[26:])


def _mapped(host: str) -> bytes:
    ip = ipaddress.ip_address(host)
    if ip.version == 4:
        ip = ipaddress.IPv6Address("::ffff:" + str(ip))
    return ip.packed


def _same_host(a: str, b: str) -> bool:
    return _mapped(a) == _mapped(b)


def token_mac(secret: bytes, body: bytes) -> bytes:
    return hmac.new(secret, body, hashlib.sha256).digest()


def make_token(source: Address, secret: bytes, now_ms: int) -> bytes:
    host, port = source
    body = _mapped(host) + struct.pack("!HQ", port, int(now_ms))
    return body + token_mac(secret, body)


def issue_retry(initial: Packet, observed_source: Address, server_secret: bytes, now_ms: int) -> Packet:
    """Answer a tokenless INITIAL with a RETRY; no per-connection state is kept.

    The RETRY keeps the client's chosen dcid as the server cid so the client
    (or a proxy replaying on its behalf) can resend the original INITIAL as is.
    """
    if initial.type != PacketType.INITIAL:
        raise ValueError("retry is only issued for INITIAL packets")
    if initial.token:
        raise ValueError("INITIAL already carries a token")
    return Packet(
        type=PacketType.RETRY,
        dcid=initial.scid,
        scid=initial.dcid,
        packet_number=0,
        token=make_token(observed_source, server_secret, now_ms),
    )


def validate_token(
    token: bytes,
    observed_source: Address,
    server_secret: bytes,
    now_ms: int,
    freshness_ms: int = DEFAULT_FRESHNESS_MS,
) -> TokenVerdict:
    try:
        parsed = RetryToken.decode(token)
    except ValueError:
        return TokenVerdict.BAD_MAC
    if not hmac.compare_digest(parsed.mac, token_mac(server_secret, parsed.body())):
        return TokenVerdict.BAD_MAC
    host, port = observed_source
    if port != parsed.claimed_port or not _same_host(host, parsed.address[0]):
        return TokenVerdict.ADDRESS_MISMATCH
    if now_ms - parsed.issued_at_ms > freshness_ms:
        return TokenVerdict.STALE
    return TokenVerdict.ACCEPT
