"""Stub resolver with per-attempt timeout, retries, id matching and a TTL-clamped cache."""
import asyncio
import logging
import random
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple, Union

from .message import (
    DnsDecodeError,
    DnsMessage,
    Rcode,
    RType,
    decode_message,
    encode_message,
    normalize_name,
    query,
)

logger = logging.getLogger("quicsocks.dns")

Address = Tuple[str, int]
MIN_TTL_S = 1
MAX_TTL_S = 300


class ResolutionError(Exception):
    pass


class ResolutionTimeout(ResolutionError):
    def __init__(self, name: str) -> None:
        super().__init__(f"resolution-timeout: {name}")
        self.name = name


class NxDomain(ResolutionError):
    def __init__(self, name: str) -> None:
        super().__init__(f"nxdomain: {name}")
        self.name = name


class NoAnswer(ResolutionError):
    def __init__(self, name: str) -> None:
        super().__init__(f"no-answer: {name}")
        self.name = name


class ServerFailure(ResolutionError):
    def __init__(self, name: str, rcode: Rcode) -> None:
        super().__init__(f"{rcode.name.lower()}: {name}")
        self.rcode = rcode


@dataclass(frozen=True)
class Resolution:
    name: str
    addresses: Tuple[str, ...]
    ttl_s: int  # minimum answer TTL clamped to [1, 300]
    message_id: int
    cached: bool = False


def clamp_ttl(ttl: int) -> int:
    return max(MIN_TTL_S, min(MAX_TTL_S, ttl))


Callback = Callable[[Union[Resolution, ResolutionError]], None]


@dataclass
class _Query:
    name: str
    qtype: RType
    msg_id: int
    attempts: int
    callback: Callback
    timer: object = None


class StubResolver:
    """Sends queries to a single upstream; concurrent queries are keyed by id."""

    def __init__(
        self,
        runtime,
        upstream: Address,
        *,
        timeout_ms: float = 1000.0,
        retries: int = 2,
        cache: bool = False,
        rng: Optional[random.Random] = None,
        bind: Optional[Address] = None,
    ) -> None:
        if retries < 0 or timeout_ms <= 0:
            raise ValueError("retries must be >= 0 and timeout positive")
        self.runtime = runtime
        self.upstream = (upstream[0], upstream[1])
        self.timeout_ms = timeout_ms
        self.retries = retries
        self.use_cache = cache
        self._rng = rng or random.SystemRandom()
        self._cache: Dict[Tuple[str, RType], Tuple[float, Resolution]] = {}
        self._inflight: Dict[int, _Query] = {}
        self.socket = runtime.bind_udp(bind, self._on_datagram)
        self.queries_sent = 0

    def resolve(self, name: str, callback: Callback, qtype: RType = RType.A) -> None:
        key = (normalize_name(name), qtype)
        if self.use_cache:
            hit = self._cache.get(key)
            if hit is not None and hit[0] > self.runtime.now():
                res = hit[1]
                callback(Resolution(res.name, res.addresses, res.ttl_s, res.message_id, cached=True))
                return
        msg_id = self._rng.randrange(0x10000)
        while msg_id in self._inflight:
            msg_id = self._rng.randrange(0x10000)
        q = _Query(name, qtype, msg_id, 0, callback)
        self._inflight[msg_id] = q
        self._send(q)

    def _send(self, q: _Query) -> None:
        q.attempts += 1
        self.queries_sent += 1
        self.socket.sendto(encode_message(query(q.msg_id, q.name, q.qtype)), self.upstream)
        q.timer = self.runtime.call_later(self.timeout_ms, lambda: self._timeout(q))

    def _timeout(self, q: _Query) -> None:
        if self._inflight.get(q.msg_id) is not q:
            return
        if q.attempts <= self.retries:
            logger.debug("dns retry %d for %s", q.attempts, q.name)
            self._send(q)
            return
        del self._inflight[q.msg_id]
        q.callback(ResolutionTimeout(q.name))

    def _on_datagram(self, data: bytes, src: Address) -> None:
        if src != self.upstream:
            return
        try:
            msg = decode_message(data)
        except DnsDecodeError as exc:
            logger.debug("undecodable dns response: %s", exc)
            return
        q = self._inflight.get(msg.id)
        if q is None or not msg.qr or msg.question is None:
            return
        if normalize_name(msg.question.name) != normalize_name(q.name) or msg.question.qtype != q.qtype:
            return
        del self._inflight[msg.id]
        q.timer.cancel()
        q.callback(self._result(q, msg))

    def _result(self, q: _Query, msg: DnsMessage) -> Union[Resolution, ResolutionError]:
        if msg.rcode == Rcode.NXDOMAIN:
            return NxDomain(q.name)
        if msg.rcode != Rcode.NOERROR:
            return ServerFailure(q.name, msg.rcode)
        records = [rr for rr in msg.answers if rr.rtype == q.qtype]
        if not records:
            return NoAnswer(q.name)
        ttl = clamp_ttl(min(rr.ttl for rr in records))
        res = Resolution(q.name, tuple(rr.address for rr in records), ttl, msg.id)
        if self.use_cache:
            self._cache[(normalize_name(q.name), q.qtype)] = (self.runtime.now() + ttl * 1000.0, res)
        return res

    def close(self) -> None:
        for q in self._inflight.values():
            if q.timer is not None:
                q.timer.cancel()
        self._inflight.clear()
        self.socket.close()


def resolve(
    name: str,
    upstream: Address,
    timeout_ms: float = 1000.0,
    retries: int = 2,
    qtype: RType = RType.A,
) -> Resolution:
    """Blocking resolution over real UDP sockets; raises a ResolutionError on failure."""
    from ..runtime import AsyncioRuntime

    async def run() -> Union[Resolution, ResolutionError]:
        loop = asyncio.get_running_loop()
        done: asyncio.Future = loop.create_future()
        family_any = "::" if ":" in upstream[0] else "0.0.0.0"
        stub = StubResolver(AsyncioRuntime(loop), upstream, timeout_ms=timeout_ms, retries=retries, bind=(family_any, 0))
        stub.resolve(name, lambda r: done.done() or done.set_result(r), qtype)
        try:
            return await done
        finally:
            stub.close()

    result = asyncio.run(run())
    if isinstance(result, ResolutionError):
        raise result
    return result
