"""Resolver discovery: query a random label below a zone we are authoritative for,
then see which address the query arrived from at the authoritative server."""
import json
import random
import string
from typing import Callable, Iterable, List, Optional, Set, Tuple, Union

from .server import ResolverObservation
from .stub import StubResolver

Address = Tuple[str, int]
LABEL_ALPHABET = string.ascii_lowercase + string.digits
LABEL_LENGTH = 16


class DiscoveryTimeout(Exception):
    def __init__(self, name: str) -> None:
        super().__init__(f"discovery-timeout: {name}")
        self.name = name


def random_label(rng: random.Random) -> str:
    return "".join(rng.choice(LABEL_ALPHABET) for _ in range(LABEL_LENGTH))


ObservationSource = Callable[[str], List[ResolverObservation]]


class ResolverDiscovery:
    """Runs probes from a client through its configured resolver.

    ``observations`` maps a queried name to what the authoritative server saw,
    e.g. ``AuthoritativeServer.observed`` or :func:`observations_from_log`.
    """

    def __init__(
        self,
        runtime,
        stub: StubResolver,
        authority_zone: str,
        observations: ObservationSource,
        *,
        deadline_ms: float = 5000.0,
        rng: Optional[random.Random] = None,
    ) -> None:
        self.runtime = runtime
        self.stub = stub
        self.zone = authority_zone.rstrip(".")
        self.observations = observations
        self.deadline_ms = deadline_ms
        self._rng = rng or random.SystemRandom()
        self._used: Set[str] = set()

    def fresh_name(self) -> str:
        while True:
            name = f"{random_label(self._rng)}.{self.zone}"
            if name not in self._used:
                self._used.add(name)
                return name

    def probe(self, callback: Callable[[Union[ResolverObservation, DiscoveryTimeout]], None]) -> str:
        name = self.fresh_name()
        state = {"done": False}

        def finish(final: bool) -> None:
            if state["done"]:
                return
            seen = self.observations(name)
            if seen:
                state["done"] = True
                timer.cancel()
                first = seen[0]
                callback(
                    ResolverObservation(first.name, first.resolver_ip, first.resolver_port, first.ts_ms, self.stub.upstream)
                )
            elif final:
                state["done"] = True
                callback(DiscoveryTimeout(name))

        timer = self.runtime.call_later(self.deadline_ms, lambda: finish(True))
        self.stub.resolve(name, lambda _result: finish(False))
        return name


def observations_from_log(path) -> ObservationSource:
    """Read the authoritative server's JSON-lines log on each lookup."""

    def lookup(name: str) -> List[ResolverObservation]:
        out = []
        try:
            with open(path) as fh:
                for line in fh:
                    rec = json.loads(line)
                    if rec["name"].lower() == name.lower():
                        out.append(ResolverObservation(rec["name"], rec["resolver_ip"], rec["resolver_port"], rec["ts_ms"]))
        except FileNotFoundError:
            pass
        return out

    return lookup


def discover_resolver(
    authority_zone: str,
    resolver: Address,
    log_path,
    *,
    deadline_ms: float = 5000.0,
    timeout_ms: float = 1000.0,
) -> ResolverObservation:
    """Blocking probe over real sockets; the authoritative server must log to ``log_path``."""
    import asyncio

    from ..runtime import AsyncioRuntime

    async def run():
        loop = asyncio.get_running_loop()
        done = loop.create_future()
        rt = AsyncioRuntime(loop)
        stub = StubResolver(rt, resolver, timeout_ms=timeout_ms, retries=max(0, int(deadline_ms // timeout_ms) - 1), bind=("0.0.0.0", 0))
        disco = ResolverDiscovery(rt, stub, authority_zone, observations_from_log(log_path), deadline_ms=deadline_ms)
        disco.probe(lambda r: done.done() or done.set_result(r))
        try:
            return await done
        finally:
            stub.close()

    result = asyncio.run(run())
    if isinstance(result, DiscoveryTimeout):
        raise result
    return result
