"""Sans-I/O connection object wrapping the handshake with paths and migration.

The caller feeds datagrams in with ``receive_datagram`` and drains
``datagrams_to_send``; every outgoing datagram is tagged with a path key. For a
client the key is an opaque label chosen by the caller (``"proxy"``,
``"direct"``); for a server it is the peer's ``(host, port)``.
"""
import logging
import os
from collections import Counter, deque
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Deque, Dict, Hashable, List, Optional, Set, Tuple

from .handshake import (
    ConnectionClosed,
    HandshakeComplete,
    HandshakeError,
    HandshakeState,
    Phase,
    ServerPolicy,
    client_handshake_step,
    client_initial,
    new_client_state,
    server_handshake_step,
)
from .packet import (
    CHALLENGE_LENGTH,
    CID_LENGTH,
    MAX_DATAGRAM_SIZE,
    PROBING_FRAME_TYPES,
    RANDOM_LENGTH,
    Frame,
    FrameType,
    Packet,
    PacketDecodeError,
    PacketType,
    ack,
    decode_packet,
    encode_packet,
    parse_ack,
)

logger = logging.getLogger("quicsocks.quic")

PathKey = Hashable
RandomSource = Callable[[int], bytes]

RTT_SAMPLE_WEIGHT = 1 / 8
UNVALIDATED_SEND_BUDGET = 3
MAX_PATH_CHALLENGES = 3


class MigrationError(Exception):
    pass


@dataclass
class ConnectionConfig:
    handshake_timeout_ms: float = 10_000.0
    initial_pto_ms: float = 1_000.0
    path_probe_timeout_ms: float = 1_000.0


# events beyond the handshake ones


@dataclass(frozen=True)
class PathValidated:
    path: PathKey


@dataclass(frozen=True)
class MigrationComplete:
    old_path: PathKey
    new_path: PathKey


@dataclass(frozen=True)
class MigrationFailed:
    path: PathKey


@dataclass(frozen=True)
class PeerMigrated:
    old_address: PathKey
    new_address: PathKey


@dataclass(frozen=True)
class AppDataReceived:
    data: bytes
    path: PathKey


class RttEstimator:
    """Smoothed RTT with a 1/8 weight on new samples; cleared on migration."""

    def __init__(self) -> None:
        self.reset()

    def reset(self) -> None:
        self.smoothed_rtt: Optional[float] = None
        self.latest_sample: Optional[float] = None
        self.sample_count = 0

    def update(self, sample: float) -> None:
        self.latest_sample = sample
        if self.smoothed_rtt is None:
            self.smoothed_rtt = sample
        else:
            self.smoothed_rtt = (1 - RTT_SAMPLE_WEIGHT) * self.smoothed_rtt + RTT_SAMPLE_WEIGHT * sample
        self.sample_count += 1


@dataclass
class _Challenge:
    # every value sent on this path that is still awaiting a response
    outstanding: Set[bytes]
    attempts: int
    deadline: float


@dataclass
class _Sent:
    time: float
    path: PathKey
    epoch: int


class QuicConnection:
    def __init__(
        self,
        state: HandshakeState,
        *,
        config: Optional[ConnectionConfig] = None,
        rng: RandomSource = os.urandom,
        policy: Optional[ServerPolicy] = None,
        active_path: PathKey = None,
    ) -> None:
        self._hs = state
        self._config = config or ConnectionConfig()
        self._rng = rng
        self._policy = policy
        self.is_client = state.role == "client"
        self.active_path = active_path
        self._validated = set()
        if active_path is not None and not self.is_client:
            self._validated.add(active_path)
        self._events: Deque[Any] = deque()
        self._out: List[Tuple[bytes, PathKey]] = []
        self._challenges: Dict[PathKey, _Challenge] = {}
        self._migrate_target: Optional[PathKey] = None
        self._unvalidated_sent: Counter = Counter()
        self._deferred: List[Tuple[Packet, PathKey]] = []
        self._early_packets: List[Tuple[Packet, PathKey]] = []
        self._sent: Dict[int, _Sent] = {}
        self._epoch = 0
        self._largest_received: Optional[int] = None
        self._client_fin: Optional[Frame] = None
        self._pto_deadline: Optional[float] = None
        self._pto_ms = self._config.initial_pto_ms
        self._handshake_deadline: Optional[float] = None
        self.rtt = RttEstimator()
        # (time, sample, epoch) for every sample ever taken; diagnostics only
        self.rtt_log: List[Tuple[float, float, int]] = []
        self.migrated_at: Optional[float] = None

    # construction

    @classmethod
    def client(
        cls,
        server_name: str,
        *,
        rng: RandomSource = os.urandom,
        config: Optional[ConnectionConfig] = None,
    ) -> "QuicConnection":
        state = new_client_state(
            server_name,
            client_random=rng(RANDOM_LENGTH),
            local_cid=rng(CID_LENGTH),
            initial_dcid=rng(CID_LENGTH),
        )
        return cls(state, config=config, rng=rng)

    # introspection

    @property
    def handshake_state(self) -> HandshakeState:
        return self._hs

    @property
    def phase(self) -> Phase:
        return self._hs.phase

    @property
    def forward_secure_key(self) -> Optional[bytes]:
        return self._hs.forward_secure_key

    @property
    def original_dcid(self) -> bytes:
        return self._hs.peer_cid if self.is_client else self._hs.local_cid

    def is_path_validated(self, path: PathKey) -> bool:
        return path in self._validated

    def next_event(self):
        return self._events.popleft() if self._events else None

    # output

    def datagrams_to_send(self, now: float) -> List[Tuple[bytes, PathKey]]:
        out, self._out = self._out, []
        return out

    def _queue(self, packet: Packet, path: PathKey, now: float) -> None:
        if not self.is_client and path not in self._validated:
            if self._unvalidated_sent[path] >= UNVALIDATED_SEND_BUDGET:
                self._deferred.append((packet, path))
                return
            self._unvalidated_sent[path] += 1
        data = encode_packet(packet)
        if len(data) > MAX_DATAGRAM_SIZE:
            logger.warning("dropping %d byte datagram above the size limit", len(data))
            return
        self._sent[packet.packet_number] = _Sent(now, path, self._epoch)
        self._out.append((data, path))

    def _one_rtt(self, frames: List[Frame]) -> Packet:
        if self._largest_received is not None:
            frames = frames + [ack(self._largest_received)]
        pkt = Packet(
            type=PacketType.ONE_RTT,
            dcid=self._hs.peer_cid,
            scid=self._hs.local_cid,
            packet_number=self._hs.next_packet_number,
            frames=tuple(frames),
        )
        self._hs = replace(self._hs, next_packet_number=self._hs.next_packet_number + 1)
        return pkt

    def _emit_handshake(self, packets: List[Packet], events: list, path: PathKey, now: float) -> None:
        for pkt in packets:
            if self.is_client and pkt.type == PacketType.HANDSHAKE:
                self._client_fin = pkt.frame(FrameType.FIN)
            self._queue(pkt, path, now)
        for ev in events:
            self._events.append(ev)
            if isinstance(ev, ConnectionClosed):
                self._stop_timers()

    # client API

    def connect(self, path: PathKey, now: float) -> None:
        if not self.is_client:
            raise RuntimeError("connect() is for clients")
        self.active_path = path
        self._validated.add(path)
        self._hs, packets, events = client_handshake_step(self._hs, None)
        self._emit_handshake(packets, events, path, now)
        self._pto_deadline = now + self._pto_ms
        self._handshake_deadline = now + self._config.handshake_timeout_ms

    def send_app_data(self, data: bytes, now: float) -> None:
        if not self._hs.is_forward_secure:
            raise RuntimeError("application data before forward-secure keys")
        self._queue(self._one_rtt([Frame(FrameType.APPDATA, data)]), self.active_path, now)

    def send_ping(self, now: float) -> None:
        if self._hs.is_forward_secure:
            self._queue(self._one_rtt([Frame(FrameType.PING)]), self.active_path, now)

    def probe_path(self, path: PathKey, now: float) -> None:
        """Start validating ``path`` without moving traffic onto it."""
        if self.phase == Phase.CLOSED or path in self._validated:
            return
        self._send_challenge(path, now, attempts=0)

    def migrate(self, path: PathKey, now: float) -> None:
        if not self.is_client:
            raise MigrationError("only clients initiate migration")
        if not self._hs.is_forward_secure:
            raise MigrationError("migration-too-early")
        if path == self.active_path:
            return
        self._migrate_target = path
        self._hs = replace(self._hs, phase=Phase.MIGRATING)
        if path in self._validated:
            self._complete_migration(path, now)
        else:
            # a probe lost before the server had state is simply sent again
            self._send_challenge(path, now, attempts=0)

    def _send_challenge(self, path: PathKey, now: float, attempts: int) -> None:
        data = self._rng(CHALLENGE_LENGTH)
        previous = self._challenges.get(path)
        outstanding = (previous.outstanding if previous is not None else set()) | {data}
        self._challenges[path] = _Challenge(outstanding, attempts + 1, now + self._config.path_probe_timeout_ms)
        self._queue(self._one_rtt([Frame(FrameType.PATH_CHALLENGE, data)]), path, now)

    def _complete_migration(self, path: PathKey, now: float) -> None:
        old = self.active_path
        self.active_path = path
        self._migrate_target = None
        self._epoch += 1
        self.rtt.reset()
        self.migrated_at = now
        self._hs = replace(self._hs, phase=Phase.ESTABLISHED_ON_NEW_PATH)
        self._events.append(MigrationComplete(old, path))
        # non-probing packet so the peer switches to the new path too
        self.send_ping(now)

    # input

    def receive_datagram(self, data: bytes, path: PathKey, now: float) -> None:
        try:
            packet = decode_packet(data)
        except PacketDecodeError as exc:
            logger.debug("dropping undecodable datagram: %s", exc.reason)
            return
        self.receive_packet(packet, path, now)

    def receive_packet(self, packet: Packet, path: PathKey, now: float) -> None:
        if self.phase == Phase.CLOSED:
            return
        if packet.dcid != self._hs.local_cid:
            return
        if packet.type != PacketType.RETRY:
            if self._largest_received is None or packet.packet_number > self._largest_received:
                self._largest_received = packet.packet_number
        for f in packet.frames:
            if f.type == FrameType.ACK:
                self._on_ack(parse_ack(f), path, now)
        if packet.type == PacketType.ONE_RTT:
            self._on_one_rtt(packet, path, now)
        elif self.is_client:
            self._client_handshake(packet, path, now)
        else:
            self._server_handshake(packet, path, now)

    def _client_handshake(self, packet: Packet, path: PathKey, now: float) -> None:
        if packet.type == PacketType.HANDSHAKE and self._hs.is_forward_secure:
            # server repeated its flight: our FIN was lost
            if self._client_fin is not None:
                pkt = Packet(PacketType.HANDSHAKE, self._hs.peer_cid, self._hs.local_cid, self._hs.next_packet_number, (self._client_fin,))
                self._hs = replace(self._hs, next_packet_number=self._hs.next_packet_number + 1)
                self._queue(pkt, self.active_path, now)
            return
        before = self._hs.phase
        self._hs, packets, events = client_handshake_step(self._hs, packet)
        self._emit_handshake(packets, events, self.active_path, now)
        if self._hs.phase != before:
            self._pto_ms = self._config.initial_pto_ms
            self._pto_deadline = None if self._hs.is_forward_secure else now + self._pto_ms
            if self._hs.is_forward_secure:
                self._handshake_deadline = None

    def _server_handshake(self, packet: Packet, path: PathKey, now: float) -> None:
        was_secure = self._hs.is_forward_secure
        self._hs, packets, events = server_handshake_step(
            self._hs, packet, self._policy, path, int(now), self._hs.server_random
        )
        self._emit_handshake(packets, events, path, now)
        if not was_secure and self._hs.is_forward_secure:
            self._pto_deadline = None
            self._handshake_deadline = None
            early, self._early_packets = self._early_packets, []
            for pkt, p in early:
                self._on_one_rtt(pkt, p, now)

    def _on_ack(self, pn: int, path: PathKey, now: float) -> None:
        sent = self._sent.pop(pn, None)
        if sent is None or sent.epoch != self._epoch or sent.path != self.active_path:
            return
        sample = now - sent.time
        self.rtt.update(sample)
        self.rtt_log.append((now, sample, self._epoch))

    def _on_one_rtt(self, packet: Packet, path: PathKey, now: float) -> None:
        probing_only = all(f.type in PROBING_FRAME_TYPES or f.type == FrameType.ACK for f in packet.frames)
        if self._hs.phase == Phase.IDLE:
            return
        if not self.is_client and not self._hs.is_forward_secure and not probing_only:
            self._early_packets.append((packet, path))
            return
        for f in packet.frames:
            if f.type == FrameType.PATH_CHALLENGE:
                self._queue(self._one_rtt([Frame(FrameType.PATH_RESPONSE, f.value)]), path, now)
            elif f.type == FrameType.PATH_RESPONSE:
                self._on_path_response(f.value, path, now)
        if not self.is_client and not probing_only and path != self.active_path:
            self._server_peer_moved(path, now)
        for f in packet.frames:
            if f.type == FrameType.APPDATA:
                self._events.append(AppDataReceived(f.value, path))

    def _on_path_response(self, data: bytes, path: PathKey, now: float) -> None:
        challenge = self._challenges.get(path)
        if challenge is None or data not in challenge.outstanding:
            return
        del self._challenges[path]
        self._validated.add(path)
        self._events.append(PathValidated(path))
        if self.is_client and self._migrate_target == path and self._hs.is_forward_secure:
            self._complete_migration(path, now)
        if not self.is_client:
            deferred, self._deferred = self._deferred, []
            for pkt, p in deferred:
                self._queue(pkt, p, now)

    def _server_peer_moved(self, path: PathKey, now: float) -> None:
        old = self.active_path
        self.active_path = path
        self._epoch += 1
        self.rtt.reset()
        self.migrated_at = now
        self._events.append(PeerMigrated(old, path))
        if path not in self._validated and path not in self._challenges:
            self._send_challenge(path, now, attempts=0)

    # timers

    def _stop_timers(self) -> None:
        self._pto_deadline = None
        self._handshake_deadline = None
        self._challenges.clear()

    def get_timer(self) -> Optional[float]:
        deadlines = [d for d in (self._pto_deadline, self._handshake_deadline) if d is not None]
        deadlines += [c.deadline for c in self._challenges.values()]
        return min(deadlines) if deadlines else None

    def handle_timer(self, now: float) -> None:
        if self.phase == Phase.CLOSED:
            return
        if self._handshake_deadline is not None and now >= self._handshake_deadline:
            self._hs = replace(self._hs, phase=Phase.CLOSED, forward_secure_key=None, handshake_secret=None, error=HandshakeError.TIMEOUT.value)
            self._events.append(ConnectionClosed(HandshakeError.TIMEOUT.value))
            self._stop_timers()
            return
        if self._pto_deadline is not None and now >= self._pto_deadline:
            self._retransmit_handshake(now)
        for path, challenge in list(self._challenges.items()):
            if now < challenge.deadline:
                continue
            if challenge.attempts >= MAX_PATH_CHALLENGES:
                del self._challenges[path]
                if self.is_client and self._migrate_target == path:
                    self._migrate_target = None
                    self._hs = replace(self._hs, phase=Phase.FORWARD_SECURE)
                    self._events.append(MigrationFailed(path))
            else:
                self._send_challenge(path, now, challenge.attempts)

    def _retransmit_handshake(self, now: float) -> None:
        self._pto_ms *= 2
        self._pto_deadline = now + self._pto_ms
        if self.is_client and self._hs.phase in (Phase.INITIAL_SENT, Phase.RETRY_RECEIVED, Phase.HANDSHAKE_KEYS_READY):
            self._hs, pkt = client_initial(self._hs)
            self._queue(pkt, self.active_path, now)
        elif not self.is_client and self._hs.phase == Phase.HANDSHAKE_KEYS_READY:
            pkt = Packet(
                PacketType.HANDSHAKE, self._hs.peer_cid, self._hs.local_cid, self._hs.next_packet_number, self._hs.server_flight
            )
            self._hs = replace(self._hs, next_packet_number=self._hs.next_packet_number + 1)
            self._queue(pkt, self.active_path, now)
        else:
            self._pto_deadline = None


def accept_server_connection(
    state: HandshakeState,
    first_flight: List[Packet],
    source: PathKey,
    now: float,
    *,
    policy: ServerPolicy,
    config: Optional[ConnectionConfig] = None,
    rng: RandomSource = os.urandom,
) -> QuicConnection:
    """Wrap a freshly accepted handshake state and queue its first flight."""
    conn = QuicConnection(state, config=config, rng=rng, policy=policy, active_path=source)
    conn._emit_handshake(first_flight, [], source, now)
    conn._pto_deadline = now + conn._pto_ms
    conn._handshake_deadline = now + conn._config.handshake_timeout_ms
    return conn
