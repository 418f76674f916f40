"""Demo server: miniquic handshakes plus an echo of every APPDATA payload."""
import logging
import os
from typing import Callable, Optional, Tuple

from ..miniquic import AppDataReceived, ConnectionConfig, HandshakeComplete, QuicServer

logger = logging.getLogger("quicsocks.server")

Address = Tuple[str, int]


class DemoServer:
    def __init__(
        self,
        runtime,
        listen: Optional[Address] = None,
        *,
        retry: bool = False,
        secret: Optional[bytes] = None,
        freshness_ms: int = 30_000,
        echo: bool = True,
        rng: Callable[[int], bytes] = os.urandom,
        config: Optional[ConnectionConfig] = None,
    ) -> None:
        self.runtime = runtime
        self.echo = echo
        self.quic = QuicServer(retry=retry, secret=secret, freshness_ms=freshness_ms, rng=rng, config=config)
        self.socket = runtime.bind_udp(listen or ("0.0.0.0", 4433), self._on_datagram)
        self.handshakes_completed = 0
        self._timer = None
        self._timer_at: Optional[float] = None
        self.closed = False

    @property
    def address(self) -> Address:
        return self.socket.local_address

    @property
    def retries_sent(self) -> int:
        return self.quic.retries_sent

    def _on_datagram(self, data: bytes, src: Address) -> None:
        self.quic.receive_datagram(data, src, self.runtime.now())
        self._flush()

    def _on_timer(self) -> None:
        self._timer = None
        self._timer_at = None
        if not self.closed:
            self.quic.handle_timer(self.runtime.now())
            self._flush()

    def _flush(self) -> None:
        now = self.runtime.now()
        while True:
            item = self.quic.next_event()
            if item is None:
                break
            conn, ev = item
            if isinstance(ev, HandshakeComplete):
                self.handshakes_completed += 1
            elif isinstance(ev, AppDataReceived) and self.echo:
                conn.send_app_data(ev.data, now)
        for data, addr in self.quic.datagrams_to_send(now):
            self.socket.sendto(data, addr)
        at = self.quic.get_timer()
        if at != self._timer_at:
            if self._timer is not None:
                self._timer.cancel()
                self._timer = None
            self._timer_at = at
            if at is not None:
                self._timer = self.runtime.call_later(at - now, self._on_timer)

    def close(self) -> None:
        self.closed = True
        if self._timer is not None:
            self._timer.cancel()
        self.socket.close()


def serve(runtime, listen: Address, retry: bool = False, echo: bool = True, **kw) -> DemoServer:
    return DemoServer(runtime, listen, retry=retry, echo=echo, **kw)
