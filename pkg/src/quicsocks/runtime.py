"""The runtime surface actors are written against, and its asyncio implementation.

Every actor (proxy daemon, demo server, client session, DNS servers) takes a
runtime object offering::

    now() -> float                                  milliseconds
    call_later(delay_ms, callback, daemon=False)    returns a handle with cancel()
    bind_udp(addr, on_datagram)                     returns sendto/close/local_address
    listen_tcp(addr, on_accept)                     on_accept(stream)
    connect_tcp(addr, on_connected, on_error=None)  on_connected(stream)

Streams offer write(), close(), set_handlers(on_data, on_close),
local_address and peer_address. :class:`quicsocks.netsim.Host` provides the
same surface over logical time, so the same actor code runs in both.
"""
import asyncio
import concurrent.futures
import logging
import socket
import threading
from typing import Any, Callable, Optional, Protocol, Tuple

logger = logging.getLogger("quicsocks.runtime")

Address = Tuple[str, int]


class Runtime(Protocol):
    def now(self) -> float: ...

    def call_later(self, delay_ms: float, callback: Callable[[], None], daemon: bool = False) -> Any: ...

    def bind_udp(self, addr: Optional[Address], on_datagram: Callable[[bytes, Address], None]) -> Any: ...

    def listen_tcp(self, addr: Optional[Address], on_accept: Callable[[Any], None]) -> Any: ...

    def connect_tcp(self, addr: Address, on_connected: Callable[[Any], None], on_error=None) -> None: ...


def _norm(addr) -> Address:
    return (addr[0], addr[1])


class AsyncioUdpSocket:
    """Non-blocking UDP socket serviced by the event loop's reader callbacks."""

    def __init__(self, loop: asyncio.AbstractEventLoop, addr: Address, on_datagram) -> None:
        family = socket.AF_INET6 if ":" in addr[0] else socket.AF_INET
        self._sock = socket.socket(family, socket.SOCK_DGRAM)
        self._sock.setblocking(False)
        self._sock.bind(addr)
        self._loop = loop
        self._on_datagram = on_datagram
        self.local_address: Address = _norm(self._sock.getsockname())
        self.closed = False
        loop.add_reader(self._sock.fileno(), self._readable)

    def _readable(self) -> None:
        while not self.closed:
            try:
                data, src = self._sock.recvfrom(65535)
            except (BlockingIOError, InterruptedError):
                return
            except OSError as exc:
                # e.g. ICMP port unreachable surfaced on Linux
                logger.debug("udp recv error on %s: %s", self.local_address, exc)
                continue
            try:
                self._on_datagram(data, _norm(src))
            except Exception:
                logger.exception("datagram handler failed")

    def sendto(self, data: bytes, addr: Address) -> None:
        if self.closed:
            raise OSError("socket is closed")
        try:
            self._sock.sendto(data, tuple(addr))
        except (BlockingIOError, InterruptedError):
            logger.debug("udp send buffer full; datagram dropped")
        except OSError as exc:
            logger.debug("udp send to %s failed: %s", addr, exc)

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            self._loop.remove_reader(self._sock.fileno())
            self._sock.close()


class AsyncioStream(asyncio.Protocol):
    def __init__(self) -> None:
        self.transport: Optional[asyncio.Transport] = None
        self.local_address: Optional[Address] = None
        self.peer_address: Optional[Address] = None
        self._on_data = None
        self._on_close = None
        self._backlog = []
        self._eof = False
        self.closed = False
        self.on_made: Optional[Callable[["AsyncioStream"], None]] = None

    def connection_made(self, transport) -> None:
        self.transport = transport
        self.local_address = _norm(transport.get_extra_info("sockname"))
        self.peer_address = _norm(transport.get_extra_info("peername"))
        if self.on_made is not None:
            self.on_made(self)

    def data_received(self, data: bytes) -> None:
        if self._on_data is None:
            self._backlog.append(data)
        else:
            self._on_data(data)

    def connection_lost(self, exc) -> None:
        self._eof = True
        was_closed, self.closed = self.closed, True
        if not was_closed and self._on_close is not None:
            self._on_close()

    def set_handlers(self, on_data, on_close=None) -> None:
        self._on_data = on_data
        self._on_close = on_close
        backlog, self._backlog = self._backlog, []
        for chunk in backlog:
            on_data(chunk)
        if self._eof and on_close is not None:
            on_close()

    def write(self, data: bytes) -> None:
        if not self.closed and self.transport is not None:
            self.transport.write(data)

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            if self.transport is not None:
                self.transport.close()


class AsyncioListener:
    def __init__(self, loop: asyncio.AbstractEventLoop, addr: Address, on_accept) -> None:
        family = socket.AF_INET6 if ":" in addr[0] else socket.AF_INET
        sock = socket.socket(family, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind(addr)
        sock.listen(128)
        sock.setblocking(False)
        self.local_address: Address = _norm(sock.getsockname())
        self._server: Optional[asyncio.AbstractServer] = None

        def factory():
            stream = AsyncioStream()
            stream.on_made = on_accept
            return stream

        async def start():
            self._server = await loop.create_server(factory, sock=sock)

        self._task = loop.create_task(start())

    def close(self) -> None:
        if self._server is not None:
            self._server.close()
        else:
            self._task.cancel()


class AsyncioRuntime:
    """Runtime backed by a running asyncio loop; methods must be called on its thread."""

    def __init__(self, loop: Optional[asyncio.AbstractEventLoop] = None) -> None:
        self.loop = loop or asyncio.get_event_loop()

    def now(self) -> float:
        return self.loop.time() * 1000.0

    def call_later(self, delay_ms: float, callback: Callable[[], None], daemon: bool = False):
        return self.loop.call_later(max(0.0, delay_ms) / 1000.0, callback)

    def bind_udp(self, addr: Optional[Address], on_datagram) -> AsyncioUdpSocket:
        return AsyncioUdpSocket(self.loop, addr or ("0.0.0.0", 0), on_datagram)

    def listen_tcp(self, addr: Optional[Address], on_accept) -> AsyncioListener:
        return AsyncioListener(self.loop, addr or ("0.0.0.0", 0), on_accept)

    def connect_tcp(self, addr: Address, on_connected, on_error=None) -> None:
        def factory():
            stream = AsyncioStream()
            stream.on_made = on_connected
            return stream

        async def go_with_factory():
            try:
                await self.loop.create_connection(factory, addr[0], addr[1])
            except OSError as exc:
                if on_error is not None:
                    on_error(exc)
                else:
                    logger.warning("connect to %s failed: %s", addr, exc)

        self.loop.create_task(go_with_factory())


class BackgroundLoop:
    """An asyncio loop on a daemon thread, for hosting servers next to synchronous code."""

    def __init__(self) -> None:
        self.loop = asyncio.new_event_loop()
        self.runtime = AsyncioRuntime(self.loop)
        self._thread = threading.Thread(target=self._run, name="quicsocks-loop", daemon=True)
        self._thread.start()

    def _run(self) -> None:
        asyncio.set_event_loop(self.loop)
        self.loop.run_forever()

    def call(self, fn: Callable[[], Any], timeout: float = 10.0) -> Any:
        """Run ``fn`` on the loop thread and return its result."""
        fut: concurrent.futures.Future = concurrent.futures.Future()

        def runner():
            try:
                fut.set_result(fn())
            except BaseException as exc:  # propagate to the caller
                fut.set_exception(exc)

        self.loop.call_soon_threadsafe(runner)
        return fut.result(timeout)

    def stop(self) -> None:
        self.loop.call_soon_threadsafe(self.loop.stop)
        self._thread.join(timeout=5)
        self.loop.close()

    def __enter__(self) -> "BackgroundLoop":
        return self

    def __exit__(self, *exc) -> None:
        self.stop()
