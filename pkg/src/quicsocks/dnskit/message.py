"""DNS message codec limited to A/AAAA records in class IN.

The decoder follows compression pointers (backwards only, bounded hops); the
encoder never emits them.
"""
import enum
import ipaddress
import struct
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

CLASS_IN = 1
HEADER_LENGTH = 12
MAX_NAME_LENGTH = 255
MAX_LABEL_LENGTH = 63
MAX_POINTER_HOPS = 64


class DnsDecodeError(ValueError):
    pass


class DnsEncodeError(ValueError):
    pass


class RType(enum.IntEnum):
    A = 1
    AAAA = 28


class Rcode(enum.IntEnum):
    NOERROR = 0
    FORMERR = 1
    SERVFAIL = 2
    NXDOMAIN = 3
    NOTIMP = 4
    REFUSED = 5


_ADDRESS_LENGTH = {RType.A: 4, RType.AAAA: 16}


def normalize_name(name: str) -> str:
    return name.rstrip(".").lower()


def encode_name(name: str) -> bytes:
    name = name.rstrip(".")
    out = bytearray()
    if name:
        for label in name.split("."):
            try:
                raw = label.encode("latin-1")
            except UnicodeEncodeError:
                raise DnsEncodeError(f"label {label!r} is not single-byte text") from None
            if not raw:
                raise DnsEncodeError(f"empty label in {name!r}")
            if len(raw) > MAX_LABEL_LENGTH:
                raise DnsEncodeError(f"label longer than {MAX_LABEL_LENGTH} bytes")
            out.append(len(raw))
            out += raw
    out.append(0)
    if len(out) > MAX_NAME_LENGTH:
        raise DnsEncodeError("name longer than 255 bytes")
    return bytes(out)


def decode_name(data: bytes, offset: int) -> Tuple[str, int]:
    """Return (name, offset just past the name at its original position)."""
    labels: List[str] = []
    end: Optional[int] = None
    pos = offset
    hops = 0
    wire_length = 1
    while True:
        if pos >= len(data):
            raise DnsDecodeError("truncated name")
        length = data[pos]
        if length & 0xC0 == 0xC0:
            if pos + 1 >= len(data):
                raise DnsDecodeError("truncated compression pointer")
            target = ((length & 0x3F) << 8) | data[pos + 1]
            if target >= pos:
                raise DnsDecodeError("forward compression pointer")
            hops += 1
            if hops > MAX_POINTER_HOPS:
                raise DnsDecodeError("compression loop")
            if end is None:
                end = pos + 2
            pos = target
            continue
        if length & 0xC0:
            raise DnsDecodeError("reserved label type")
        pos += 1
        if length == 0:
            break
        if pos + length > len(data):
            raise DnsDecodeError("truncated label")
        raw = data[pos : pos + length]
        if b"." in raw:
            raise DnsDecodeError("label contains a dot")
        labels.append(raw.decode("latin-1"))
        wire_length += length + 1
        if wire_length > MAX_NAME_LENGTH:
            raise DnsDecodeError("name longer than 255 bytes")
        pos += length
    return ".".join(labels), (end if end is not None else pos)


@dataclass(frozen=True)
class Question:
    name: str
    qtype: RType = RType.A


@dataclass(frozen=True)
class ResourceRecord:
    name: str
    rtype: RType
    ttl: int
    address: str

    def __post_init__(self) -> None:
        if not 0 <= self.ttl <= 0x7FFFFFFF:
            raise DnsEncodeError("ttl out of range")


@dataclass(frozen=True)
class DnsMessage:
    id: int
    qr: bool = False
    opcode: int = 0
    aa: bool = False
    tc: bool = False
    rd: bool = True
    ra: bool = False
    rcode: Rcode = Rcode.NOERROR
    question: Optional[Question] = None
    answers: Tuple[ResourceRecord, ...] = field(default_factory=tuple)

    @property
    def flags(self) -> int:
        return (
            (int(self.qr) << 15)
            | ((self.opcode & 0xF) << 11)
            | (int(self.aa) << 10)
            | (int(self.tc) << 9)
            | (int(self.rd) << 8)
            | (int(self.ra) << 7)
            | (int(self.rcode) & 0xF)
        )

    def addresses(self) -> List[str]:
        return [rr.address for rr in self.answers]


def query(msg_id: int, name: str, qtype: RType = RType.A, rd: bool = True) -> DnsMessage:
    return DnsMessage(id=msg_id, rd=rd, question=Question(name, qtype))


def response_to(request: DnsMessage, answers=(), rcode: Rcode = Rcode.NOERROR, aa: bool = False, ra: bool = False) -> DnsMessage:
    return DnsMessage(
        id=request.id,
        qr=True,
        opcode=request.opcode,
        aa=aa,
        rd=request.rd,
        ra=ra,
        rcode=rcode,
        question=request.question,
        answers=tuple(answers),
    )


def encode_message(msg: DnsMessage) -> bytes:
    if not 0 <= msg.id <= 0xFFFF:
        raise DnsEncodeError("id out of range")
    qd = 1 if msg.question is not None else 0
    out = bytearray(struct.pack("!HHHHHH", msg.id, msg.flags, qd, len(msg.answers), 0, 0))
    if msg.question is not None:
        out += encode_name(msg.question.name)
        out += struct.pack("!HH", int(msg.question.qtype), CLASS_IN)
    for rr in msg.answers:
        rtype = RType(rr.rtype)
        packed = ipaddress.ip_address(rr.address).packed
        if len(packed) != _ADDRESS_LENGTH[rtype]:
            raise DnsEncodeError(f"{rr.address} does not fit a {rtype.name} record")
        out += encode_name(rr.name)
        out += struct.pack("!HHIH", int(rtype), CLASS_IN, rr.ttl, len(packed))
        out += packed
    return bytes(out)


def _skip_record(data: bytes, pos: int) -> Tuple[Optional[ResourceRecord], int]:
    name, pos = decode_name(data, pos)
    if pos + 10 > len(data):
        raise DnsDecodeError("truncated record header")
    rtype, rclass, ttl, rdlength = struct.unpack_from("!HHIH", data, pos)
    pos += 10
    if pos + rdlength > len(data):
        raise DnsDecodeError("truncated rdata")
    rdata = data[pos : pos + rdlength]
    pos += rdlength
    if rclass != CLASS_IN or rtype not in (RType.A, RType.AAAA):
        return None, pos
    rtype = RType(rtype)
    if rdlength != _ADDRESS_LENGTH[rtype]:
        raise DnsDecodeError(f"bad {rtype.name} rdata length {rdlength}")
    if ttl > 0x7FFFFFFF:
        ttl = 0
    address = str(ipaddress.IPv4Address(rdata) if rtype == RType.A else ipaddress.IPv6Address(rdata))
    return ResourceRecord(name, rtype, ttl, address), pos


def decode_message(data: bytes) -> DnsMessage:
    if len(data) < HEADER_LENGTH:
        raise DnsDecodeError("truncated header")
    msg_id, flags, qd, an, ns, ar = struct.unpack_from("!HHHHHH", data, 0)
    if qd > 1:
        raise DnsDecodeError("more than one question")
    pos = HEADER_LENGTH
    question = None
    if qd:
        name, pos = decode_name(data, pos)
        if pos + 4 > len(data):
            raise DnsDecodeError("truncated question")
        qtype, qclass = struct.unpack_from("!HH", data, pos)
        pos += 4
        if qclass != CLASS_IN:
            raise DnsDecodeError(f"unsupported class {qclass}")
        try:
            question = Question(name, RType(qtype))
        except ValueError:
            raise DnsDecodeError(f"unsupported qtype {qtype}") from None
    answers = []
    for index in range(an + ns + ar):
        rr, pos = _skip_record(data, pos)
        if rr is not None and index < an:
            answers.append(rr)
    rcode_value = flags & 0xF
    try:
        rcode = Rcode(rcode_value)
    except ValueError:
        raise DnsDecodeError(f"unsupported rcode {rcode_value}") from None
    return DnsMessage(
        id=msg_id,
        qr=bool(flags & 0x8000),
        opcode=(flags >> 11) & 0xF,
        aa=bool(flags & 0x0400),
        tc=bool(flags & 0x0200),
        rd=bool(flags & 0x0100),
        ra=bool(flags & 0x0080),
        rcode=rcode,
        question=question,
        answers=tuple(answers),
    )
