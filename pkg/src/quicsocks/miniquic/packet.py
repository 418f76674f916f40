"""Wire format for the miniature QUIC-like protocol.

Packet layout::

    type(1) version(4) dcid_len(1) dcid scid_len(1) scid
    [token_len(2) token]          INITIAL and RETRY only
    packet_number(4) frames...

Frames are TLV: type(1) length(2, big-endian) value.
"""
import enum
import struct
from dataclasses import dataclass
from typing import List, Optional, Tuple

VERSION = b"QSK1"
CID_LENGTH = 8
MAX_DATAGRAM_SIZE = 1350
RANDOM_LENGTH = 32
MAC_LENGTH = 32
CHALLENGE_LENGTH = 8


class PacketDecodeError(ValueError):
    def __init__(self, reason: str) -> None:
        super().__init__(reason)
        self.reason = reason


class PacketType(enum.IntEnum):
    INITIAL = 0x01
    RETRY = 0x02
    HANDSHAKE = 0x03
    ONE_RTT = 0x04


class FrameType(enum.IntEnum):
    CLIENTHELLO = 0x01
    SERVERHELLO = 0x02
    FIN = 0x03
    PATH_CHALLENGE = 0x04
    PATH_RESPONSE = 0x05
    ACK = 0x06
    PING = 0x07
    APPDATA = 0x08


# Frames that do not make the server treat a new source address as a migration.
PROBING_FRAME_TYPES = frozenset({FrameType.PATH_CHALLENGE, FrameType.PATH_RESPONSE})

_FIXED_LENGTHS = {
    FrameType.SERVERHELLO: RANDOM_LENGTH,
    FrameType.FIN: MAC_LENGTH,
    FrameType.PATH_CHALLENGE: CHALLENGE_LENGTH,
    FrameType.PATH_RESPONSE: CHALLENGE_LENGTH,
    FrameType.ACK: 4,
    FrameType.PING: 0,
}


@dataclass(frozen=True)
class Frame:
    type: FrameType
    value: bytes = b""

    def encode(self) -> bytes:
        return struct.pack("!BH", self.type, len(self.value)) + self.value


@dataclass(frozen=True)
class Packet:
    type: PacketType
    dcid: bytes
    scid: bytes
    packet_number: int
    frames: Tuple[Frame, ...] = ()
    token: bytes = b""

    def frame(self, frame_type: FrameType) -> Optional[Frame]:
        for f in self.frames:
            if f.type == frame_type:
                return f
        return None

    def frame_types(self) -> List[FrameType]:
        return [f.type for f in self.frames]


def client_hello(client_random: bytes, server_name: str) -> Frame:
    name = server_name.encode("ascii")
    if len(client_random) != RANDOM_LENGTH:
        raise ValueError("client_random must be 32 bytes")
    if len(name) > 255:
        raise ValueError("server name too long")
    return Frame(FrameType.CLIENTHELLO, client_random + bytes([len(name)]) + name)


def parse_client_hello(frame: Frame) -> Tuple[bytes, str]:
    return frame.value[:RANDOM_LENGTH], frame.value[RANDOM_LENGTH + 1 :].decode("ascii")


def ack(packet_number: int) -> Frame:
    return Frame(FrameType.ACK, struct.pack("!I", packet_number))


def parse_ack(frame: Frame) -> int:
    return struct.unpack("!I", frame.value)[0]


def _check_frame(ftype: FrameType, value: bytes) -> None:
    expected = _FIXED_LENGTHS.get(ftype)
    if expected is not None and len(value) != expected:
        raise PacketDecodeError(f"bad length {len(value)} for {ftype.name}")
    if ftype == FrameType.CLIENTHELLO:
        if len(value) < RANDOM_LENGTH + 1 or value[RANDOM_LENGTH] != len(value) - RANDOM_LENGTH - 1:
            raise PacketDecodeError("malformed CLIENTHELLO")
        try:
            value[RANDOM_LENGTH + 1 :].decode("ascii")
        except UnicodeDecodeError:
            raise PacketDecodeError("non-ascii server name") from None


def encode_frames(frames) -> bytes:
    return b"".join(f.encode() for f in frames)


def decode_frames(data: bytes) -> Tuple[Frame, ...]:
    frames = []
    pos = 0
    while pos < len(data):
        if pos + 3 > len(data):
            raise PacketDecodeError("truncated frame header")
        raw_type, length = struct.unpack_from("!BH", data, pos)
        pos += 3
        try:
            ftype = FrameType(raw_type)
        except ValueError:
            raise PacketDecodeError(f"unknown frame type 0x{raw_type:02x}") from None
        if pos + length > len(data):
            raise PacketDecodeError("truncated frame value")
        value = data[pos : pos + length]
        _check_frame(ftype, value)
        frames.append(Frame(ftype, value))
        pos += length
    return tuple(frames)


def _check_packet(packet: Packet) -> None:
    for cid in (packet.dcid, packet.scid):
        if len(cid) not in (0, CID_LENGTH):
            raise PacketDecodeError("bad cid length")
    if packet.type == PacketType.RETRY:
        if not packet.token:
            raise PacketDecodeError("RETRY without token")
        if packet.frames:
            raise PacketDecodeError("RETRY must not carry frames")
    elif packet.type != PacketType.INITIAL and packet.token:
        raise PacketDecodeError("token only allowed on INITIAL and RETRY")
    if not 0 <= packet.packet_number <= 0xFFFFFFFF:
        raise PacketDecodeError("packet number out of range")
    if len(packet.token) > 0xFFFF:
        raise PacketDecodeError("token too long")


def encode_packet(packet: Packet) -> bytes:
    _check_packet(packet)
    out = bytearray([packet.type])
    out += VERSION
    out += bytes([len(packet.dcid)]) + packet.dcid
    out += bytes([len(packet.scid)]) + packet.scid
    if packet.type in (PacketType.INITIAL, PacketType.RETRY):
        out += struct.pack("!H", len(packet.token)) + packet.token
    out += struct.pack("!I", packet.packet_number)
    out += encode_frames(packet.frames)
    return bytes(out)


@dataclass(frozen=True)
class Header:
    """Header fields readable without touching the payload."""

    type: PacketType
    dcid: bytes
    scid: bytes
    token: bytes
    token_offset: int  # where token_len starts; -1 when the type has no token
    payload_offset: int  # first byte after the packet number


def peek_header(data: bytes) -> Header:
    if len(data) < 5:
        raise PacketDecodeError("truncated header")
    try:
        ptype = PacketType(data[0])
    except ValueError:
        raise PacketDecodeError(f"unknown packet type 0x{data[0]:02x}") from None
    if data[1:5] != VERSION:
        raise PacketDecodeError("version-mismatch")
    pos = 5
    cids = []
    for _ in range(2):
        if pos >= len(data):
            raise PacketDecodeError("truncated header")
        length = data[pos]
        if length not in (0, CID_LENGTH):
            raise PacketDecodeError("bad cid length")
        pos += 1
        if pos + length > len(data):
            raise PacketDecodeError("truncated header")
        cids.append(data[pos : pos + length])
        pos += length
    token = b""
    token_offset = -1
    if ptype in (PacketType.INITIAL, PacketType.RETRY):
        token_offset = pos
        if pos + 2 > len(data):
            raise PacketDecodeError("truncated header")
        (tlen,) = struct.unpack_from("!H", data, pos)
        pos += 2
        if pos + tlen > len(data):
            raise PacketDecodeError("truncated token")
        token = data[pos : pos + tlen]
        pos += tlen
    if pos + 4 > len(data):
        raise PacketDecodeError("truncated packet number")
    return Header(ptype, cids[0], cids[1], token, token_offset, pos + 4)


def decode_packet(data: bytes) -> Packet:
    header = peek_header(data)
    (pn,) = struct.unpack_from("!I", data, header.payload_offset - 4)
    packet = Packet(
        type=header.type,
        dcid=header.dcid,
        scid=header.scid,
        packet_number=pn,
        frames=decode_frames(data[header.payload_offset :]),
        token=header.token,
    )
    _check_packet(packet)
    return packet


def with_token(initial: bytes, token: bytes) -> bytes:
    """Return ``initial`` with its token replaced; every other byte is preserved."""
    header = peek_header(initial)
    if header.type != PacketType.INITIAL:
        raise PacketDecodeError("only INITIAL packets carry a client token")
    start = header.token_offset
    end = start + 2 + len(header.token)
    return initial[:start] + struct.pack("!H", len(token)) + token + initial[end:]
