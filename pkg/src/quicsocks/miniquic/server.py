"""Server endpoint: demultiplexes datagrams to connections by connection ID."""
import logging
import os
from collections import deque
from typing import Deque, Dict, List, Optional, Tuple

from .connection import ConnectionConfig, QuicConnection, RandomSource, accept_server_connection
from .handshake import ConnectionClosed, ServerPolicy, TokenRejected, server_handshake_step
from .packet import MAX_DATAGRAM_SIZE, RANDOM_LENGTH, PacketDecodeError, PacketType, decode_packet, encode_packet
from .tokens import Address

logger = logging.getLogger("quicsocks.quic")


class QuicServer:
    """Holds per-connection state only for handshakes that got past address validation.

    ``connections`` is the state store; its size does not change while a
    tokenless INITIAL is answered with a RETRY.
    """

    def __init__(
        self,
        *,
        retry: bool = False,
        secret: Optional[bytes] = None,
        freshness_ms: int = 30_000,
        rng: RandomSource = os.urandom,
        config: Optional[ConnectionConfig] = None,
    ) -> None:
        self.policy = ServerPolicy(retry=retry, secret=secret or rng(32), freshness_ms=freshness_ms)
        self.connections: Dict[bytes, QuicConnection] = {}
        self._rng = rng
        self._config = config
        self._stateless: List[Tuple[bytes, Address]] = []
        self._events: Deque[Tuple[QuicConnection, object]] = deque()
        self.retries_sent = 0
        self.tokens_rejected = 0

    def receive_datagram(self, data: bytes, source: Address, now: float) -> Optional[QuicConnection]:
        try:
            packet = decode_packet(data)
        except PacketDecodeError as exc:
            logger.debug("server dropping datagram from %s: %s", source, exc.reason)
            return None
        conn = self.connections.get(packet.dcid)
        if conn is not None:
            conn.receive_packet(packet, source, now)
            self._collect(conn)
            return conn
        if packet.type != PacketType.INITIAL:
            return None
        state, out, events = server_handshake_step(
            None, packet, self.policy, source, int(now), self._rng(RANDOM_LENGTH)
        )
        for ev in events:
            if isinstance(ev, TokenRejected):
                self.tokens_rejected += 1
                logger.debug("token from %s rejected: %s", source, ev.verdict.value)
        if state is None:
            for pkt in out:
                if pkt.type == PacketType.RETRY:
                    self.retries_sent += 1
                data = encode_packet(pkt)
                if len(data) <= MAX_DATAGRAM_SIZE:
                    self._stateless.append((data, source))
            return None
        conn = accept_server_connection(state, out, source, now, policy=self.policy, config=self._config, rng=self._rng)
        self.connections[state.local_cid] = conn
        return conn

    def _collect(self, conn: QuicConnection) -> None:
        while True:
            ev = conn.next_event()
            if ev is None:
                break
            self._events.append((conn, ev))
            if isinstance(ev, ConnectionClosed):
                self.connections.pop(conn.handshake_state.local_cid, None)

    def next_event(self) -> Optional[Tuple[QuicConnection, object]]:
        for conn in list(self.connections.values()):
            self._collect(conn)
        return self._events.popleft() if self._events else None

    def datagrams_to_send(self, now: float) -> List[Tuple[bytes, Address]]:
        out, self._stateless = self._stateless, []
        for conn in self.connections.values():
            out.extend(conn.datagrams_to_send(now))
        return out

    def get_timer(self) -> Optional[float]:
        timers = [t for t in (c.get_timer() for c in self.connections.values()) if t is not None]
        return min(timers) if timers else None

    def handle_timer(self, now: float) -> None:
        for conn in list(self.connections.values()):
            t = conn.get_timer()
            if t is not None and t <= now:
                conn.handle_timer(now)
                self._collect(conn)

    def remove(self, conn: QuicConnection) -> None:
        self.connections.pop(conn.handshake_state.local_cid, None)
