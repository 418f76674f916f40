"""Pure handshake transitions for both roles.

Each step takes a state and one incoming packet and returns the new state,
the packets to send and the events raised. Nothing here touches the network.
"""
import enum
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

from . import crypto
from .packet import (
    RANDOM_LENGTH,
    Frame,
    FrameType,
    Packet,
    PacketType,
    ack,
    client_hello,
    decode_frames,
)
from .tokens import DEFAULT_FRESHNESS_MS, Address, TokenVerdict, issue_retry, validate_token


class Phase(enum.IntEnum):
    # CLOSED sorts below every live phase so ``phase >= FORWARD_SECURE`` only
    # holds for connections that still have keys.
    CLOSED = -1
    IDLE = 0
    INITIAL_SENT = 1
    RETRY_RECEIVED = 2
    HANDSHAKE_KEYS_READY = 3
    FORWARD_SECURE = 4
    MIGRATING = 5
    ESTABLISHED_ON_NEW_PATH = 6


class HandshakeError(str, enum.Enum):
    AUTH_FAILURE = "handshake-auth-failure"
    PROTOCOL_VIOLATION = "protocol-violation"
    TIMEOUT = "handshake-timeout"


@dataclass(frozen=True)
class HandshakeComplete:
    forward_secure_key: bytes = field(repr=False)


@dataclass(frozen=True)
class RetryReceived:
    token: bytes = field(repr=False)


@dataclass(frozen=True)
class TokenRejected:
    verdict: TokenVerdict


@dataclass(frozen=True)
class ConnectionClosed:
    error: Optional[str]


@dataclass(frozen=True)
class HandshakeState:
    role: str
    local_cid: bytes
    peer_cid: bytes
    phase: Phase = Phase.IDLE
    server_name: str = ""
    client_random: bytes = b""
    server_random: bytes = b""
    handshake_secret: Optional[bytes] = field(default=None, repr=False)
    forward_secure_key: Optional[bytes] = field(default=None, repr=False)
    transcript: bytes = crypto.EMPTY_TRANSCRIPT
    client_hello: bytes = b""  # encoded CLIENTHELLO frame, reused verbatim on retry
    token: bytes = b""
    server_flight: Tuple[Frame, ...] = ()
    next_packet_number: int = 0
    retry_received: bool = False
    error: Optional[str] = None

    @property
    def is_forward_secure(self) -> bool:
        return self.phase >= Phase.FORWARD_SECURE


@dataclass(frozen=True)
class ServerPolicy:
    retry: bool = False
    secret: bytes = field(default=b"", repr=False)
    freshness_ms: int = DEFAULT_FRESHNESS_MS


Step = Tuple[Optional[HandshakeState], List[Packet], list]


def new_client_state(server_name: str, client_random: bytes, local_cid: bytes, initial_dcid: bytes) -> HandshakeState:
    if len(client_random) != RANDOM_LENGTH:
        raise ValueError("client_random must be 32 bytes")
    return HandshakeState(
        role="client",
        local_cid=local_cid,
        peer_cid=initial_dcid,
        server_name=server_name,
        client_random=client_random,
    )


def _close(state: HandshakeState, error: str) -> Step:
    closed = replace(state, phase=Phase.CLOSED, forward_secure_key=None, handshake_secret=None, error=error)
    return closed, [], [ConnectionClosed(error)]


def _packet(state: HandshakeState, ptype: PacketType, frames, token: bytes = b"") -> Tuple[HandshakeState, Packet]:
    pkt = Packet(
        type=ptype,
        dcid=state.peer_cid,
        scid=state.local_cid,
        packet_number=state.next_packet_number,
        frames=tuple(frames),
        token=token,
    )
    return replace(state, next_packet_number=state.next_packet_number + 1), pkt


def client_initial(state: HandshakeState) -> Tuple[HandshakeState, Packet]:
    """(Re)build the client's INITIAL from the cached CLIENTHELLO bytes."""
    hello = decode_frames(state.client_hello)
    return _packet(state, PacketType.INITIAL, hello, token=state.token)


def client_handshake_step(state: HandshakeState, incoming: Optional[Packet]) -> Step:
    if state.role != "client":
        raise ValueError("client step driven with a server state")
    if state.phase == Phase.CLOSED:
        return state, [], []

    if incoming is None:
        if state.phase != Phase.IDLE:
            return state, [], []
        hello = client_hello(state.client_random, state.server_name).encode()
        state = replace(
            state,
            client_hello=hello,
            transcript=crypto.extend_transcript(state.transcript, hello),
            phase=Phase.INITIAL_SENT,
        )
        state, pkt = client_initial(state)
        return state, [pkt], []

    if incoming.type == PacketType.RETRY:
        if state.phase == Phase.INITIAL_SENT and not state.retry_received:
            state = replace(state, token=incoming.token, peer_cid=incoming.scid or state.peer_cid, retry_received=True, phase=Phase.RETRY_RECEIVED)
            state, pkt = client_initial(state)
            return state, [pkt], [RetryReceived(incoming.token)]
        if state.retry_received and state.phase == Phase.RETRY_RECEIVED:
            return _close(state, HandshakeError.PROTOCOL_VIOLATION.value)
        return state, [], []

    if incoming.type != PacketType.HANDSHAKE or state.phase not in (
        Phase.INITIAL_SENT,
        Phase.RETRY_RECEIVED,
        Phase.HANDSHAKE_KEYS_READY,
    ):
        return state, [], []

    events: list = []
    out: List[Packet] = []
    sh = incoming.frame(FrameType.SERVERHELLO)
    if sh is not None and state.phase != Phase.HANDSHAKE_KEYS_READY:
        shared = crypto.shared_secret(state.client_random, sh.value)
        state = replace(
            state,
            server_random=sh.value,
            handshake_secret=shared,
            transcript=crypto.extend_transcript(state.transcript, sh.encode()),
            phase=Phase.HANDSHAKE_KEYS_READY,
        )
    fin = incoming.frame(FrameType.FIN)
    if fin is not None and state.phase == Phase.HANDSHAKE_KEYS_READY:
        key = crypto.forward_secure_key(state.handshake_secret)
        if fin.value != crypto.fin_mac(key, state.transcript):
            return _close(state, HandshakeError.AUTH_FAILURE.value)
        transcript = crypto.extend_transcript(state.transcript, fin.encode())
        state = replace(state, transcript=transcript, forward_secure_key=key, phase=Phase.FORWARD_SECURE)
        client_fin = Frame(FrameType.FIN, crypto.fin_mac(key, transcript))
        state, pkt = _packet(state, PacketType.HANDSHAKE, [client_fin, ack(incoming.packet_number)])
        out.append(pkt)
        events.append(HandshakeComplete(key))
    return state, out, events


def _server_flight(state: HandshakeState, initial_pn: int) -> Tuple[HandshakeState, Packet]:
    return _packet(state, PacketType.HANDSHAKE, state.server_flight + (ack(initial_pn),))


def server_handshake_step(
    state: Optional[HandshakeState],
    incoming: Packet,
    policy: ServerPolicy,
    observed_source: Address,
    now_ms: int,
    server_random: bytes,
) -> Step:
    """Advance the server side.

    With ``state=None`` the packet is a candidate new connection. Rejected or
    retried INITIALs return ``None`` as the state: nothing is allocated.
    """
    if state is None:
        if incoming.type != PacketType.INITIAL:
            return None, [], []
        if policy.retry:
            if not incoming.token:
                return None, [issue_retry(incoming, observed_source, policy.secret, now_ms)], []
            verdict = validate_token(incoming.token, observed_source, policy.secret, now_ms, policy.freshness_ms)
            if not verdict.accepted:
                return None, [], [TokenRejected(verdict)]
        hello = incoming.frame(FrameType.CLIENTHELLO)
        if hello is None or len(incoming.frames) != 1:
            return None, [], []
        if len(server_random) != RANDOM_LENGTH:
            raise ValueError("server_random must be 32 bytes")
        client_random = hello.value[:RANDOM_LENGTH]
        server_name = hello.value[RANDOM_LENGTH + 1 :].decode("ascii")
        shared = crypto.shared_secret(client_random, server_random)
        sh = Frame(FrameType.SERVERHELLO, server_random)
        transcript = crypto.extend_transcript(crypto.extend_transcript(crypto.EMPTY_TRANSCRIPT, hello.encode()), sh.encode())
        fin = Frame(FrameType.FIN, crypto.fin_mac(crypto.forward_secure_key(shared), transcript))
        state = HandshakeState(
            role="server",
            local_cid=incoming.dcid,
            peer_cid=incoming.scid,
            phase=Phase.HANDSHAKE_KEYS_READY,
            server_name=server_name,
            client_random=client_random,
            server_random=server_random,
            handshake_secret=shared,
            transcript=crypto.extend_transcript(transcript, fin.encode()),
            client_hello=hello.encode(),
            token=incoming.token,
            server_flight=(sh, fin),
        )
        state, pkt = _server_flight(state, incoming.packet_number)
        return state, [pkt], []

    if state.role != "server":
        raise ValueError("server step driven with a client state")
    if state.phase == Phase.CLOSED:
        return state, [], []
    if incoming.type == PacketType.INITIAL and state.phase == Phase.HANDSHAKE_KEYS_READY:
        # client retransmission: repeat the same flight
        state, pkt = _server_flight(state, incoming.packet_number)
        return state, [pkt], []
    if incoming.type == PacketType.HANDSHAKE and state.phase == Phase.HANDSHAKE_KEYS_READY:
        fin = incoming.frame(FrameType.FIN)
        if fin is None:
            return state, [], []
        key = crypto.forward_secure_key(state.handshake_secret)
        if fin.value != crypto.fin_mac(key, state.transcript):
            return _close(state, HandshakeError.AUTH_FAILURE.value)
        state = replace(
            state,
            transcript=crypto.extend_transcript(state.transcript, fin.encode()),
            forward_secure_key=key,
            phase=Phase.FORWARD_SECURE,
        )
        return state, [], [HandshakeComplete(key)]
    return state, [], []

