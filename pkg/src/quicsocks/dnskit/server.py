"""DNS responders: a fixture-backed authoritative server and a forwarding resolver."""
import json
import logging
import random
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from .message import (
    DnsDecodeError,
    DnsMessage,
    Rcode,
    decode_message,
    encode_message,
    normalize_name,
    response_to,
)
from .zone import Zone

logger = logging.getLogger("quicsocks.dns")

Address = Tuple[str, int]
DNS_PORT = 53


@dataclass(frozen=True)
class ResolverObservation:
    """A query seen at the authoritative server, paired with who sent it."""

    name: str
    resolver_ip: str
    resolver_port: int
    ts_ms: float
    client_configured_resolver: Optional[Address] = None

    def to_json(self) -> str:
        return json.dumps({"name": self.name, "resolver_ip": self.resolver_ip, "resolver_port": self.resolver_port, "ts_ms": self.ts_ms})


class AuthoritativeServer:
    """Answers from a :class:`Zone` and logs the source of every query."""

    def __init__(self, runtime, zone: Zone, listen: Optional[Address] = None, log_path=None) -> None:
        self.runtime = runtime
        self.zone = zone
        self.observations: List[ResolverObservation] = []
        self._by_name: Dict[str, List[ResolverObservation]] = {}
        self._log = open(log_path, "a") if log_path else None
        self.socket = runtime.bind_udp(listen or ("0.0.0.0", DNS_PORT), self._on_datagram)
        self.queries = 0

    @property
    def address(self) -> Address:
        return self.socket.local_address

    def observed(self, name: str) -> List[ResolverObservation]:
        return list(self._by_name.get(normalize_name(name), []))

    def _on_datagram(self, data: bytes, src: Address) -> None:
        try:
            request = decode_message(data)
        except DnsDecodeError as exc:
            logger.debug("malformed query from %s: %s", src, exc)
            return
        if request.qr or request.question is None:
            return
        self.queries += 1
        q = request.question
        obs = ResolverObservation(q.name, src[0], src[1], self.runtime.now())
        self.observations.append(obs)
        self._by_name.setdefault(normalize_name(q.name), []).append(obs)
        if self._log is not None:
            self._log.write(obs.to_json() + "\n")
            self._log.flush()
        records = self.zone.lookup(q.name, q.qtype)
        if records is None:
            reply = response_to(request, rcode=Rcode.NXDOMAIN, aa=True)
        else:
            reply = response_to(request, records, aa=True)
        self.socket.sendto(encode_message(reply), src)

    def close(self) -> None:
        self.socket.close()
        if self._log is not None:
            self._log.close()


@dataclass
class _Pending:
    client: Address
    client_id: int
    request: DnsMessage
    timer: object


class ForwardingResolver:
    """A recursive-resolver stand-in: forwards to one upstream and caches answers.

    With ``cache_only`` it never forwards; uncached names get SERVFAIL.
    """

    def __init__(
        self,
        runtime,
        upstream: Address,
        listen: Optional[Address] = None,
        *,
        cache_only: bool = False,
        timeout_ms: float = 2000.0,
        rng: Optional[random.Random] = None,
    ) -> None:
        self.runtime = runtime
        self.upstream = tuple(upstream)
        self.cache_only = cache_only
        self.timeout_ms = timeout_ms
        self._rng = rng or random.Random()
        self.cache: Dict[Tuple[str, int], Tuple[float, DnsMessage]] = {}
        self._pending: Dict[int, _Pending] = {}
        self.socket = runtime.bind_udp(listen or ("0.0.0.0", DNS_PORT), self._on_datagram)
        self.forwarded = 0

    @property
    def address(self) -> Address:
        return self.socket.local_address

    def _on_datagram(self, data: bytes, src: Address) -> None:
        try:
            msg = decode_message(data)
        except DnsDecodeError:
            return
        if msg.qr:
            self._on_upstream(msg, src)
        elif msg.question is not None:
            self._on_client(msg, src)

    def _on_client(self, request: DnsMessage, src: Address) -> None:
        key = (normalize_name(request.question.name), int(request.question.qtype))
        cached = self.cache.get(key)
        if cached is not None and cached[0] > self.runtime.now():
            answer = cached[1]
            reply = response_to(request, answer.answers, rcode=answer.rcode, ra=True)
            self.socket.sendto(encode_message(reply), src)
            return
        if self.cache_only:
            self.socket.sendto(encode_message(response_to(request, rcode=Rcode.SERVFAIL, ra=True)), src)
            return
        upstream_id = self._rng.randrange(0x10000)
        while upstream_id in self._pending:
            upstream_id = self._rng.randrange(0x10000)
        timer = self.runtime.call_later(self.timeout_ms, lambda: self._expire(upstream_id))
        self._pending[upstream_id] = _Pending(src, request.id, request, timer)
        forwarded = DnsMessage(id=upstream_id, rd=False, question=request.question)
        self.forwarded += 1
        self.socket.sendto(encode_message(forwarded), self.upstream)

    def _on_upstream(self, msg: DnsMessage, src: Address) -> None:
        if src != self.upstream:
            return
        pending = self._pending.get(msg.id)
        if pending is None or msg.question != pending.request.question:
            return
        del self._pending[msg.id]
        pending.timer.cancel()
        if msg.rcode in (Rcode.NOERROR, Rcode.NXDOMAIN):
            ttl = min((rr.ttl for rr in msg.answers), default=60)
            key = (normalize_name(msg.question.name), int(msg.question.qtype))
            self.cache[key] = (self.runtime.now() + ttl * 1000.0, msg)
        reply = response_to(pending.request, msg.answers, rcode=msg.rcode, ra=True)
        self.socket.sendto(encode_message(reply), pending.client)

    def _expire(self, upstream_id: int) -> None:
        pending = self._pending.pop(upstream_id, None)
        if pending is not None:
            reply = response_to(pending.request, rcode=Rcode.SERVFAIL, ra=True)
            self.socket.sendto(encode_message(reply), pending.client)

    def close(self) -> None:
        for pending in self._pending.values():
            pending.timer.cancel()
        self._pending.clear()
        self.socket.close()
