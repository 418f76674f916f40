"""Repeated connection measurements with min/median summaries."""
import asyncio
import statistics
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

from .client import ClientSession, ConnectConfig, Mode, ProxyAssociation, TimingRecord


@dataclass
class TimingSummary:
    mode: str
    count: int
    failures: int
    min_ms: Optional[float]
    median_ms: Optional[float]

    def as_dict(self) -> dict:
        return {"summary": True, "mode": self.mode, "count": self.count, "failures": self.failures, "min_ms": self.min_ms, "median_ms": self.median_ms}


def summarize(mode: str, records: List[TimingRecord]) -> TimingSummary:
    good = [r.t_connect_ms for r in records if r.ok and r.t_connect_ms is not None]
    return TimingSummary(
        mode,
        len(good),
        len(records) - len(good),
        min(good) if good else None,
        statistics.median(good) if good else None,
    )


class TimingSuite:
    """Runs sessions one after another on ``runtime``; warm mode shares one association."""

    def __init__(
        self,
        runtime,
        config: ConnectConfig,
        repetitions: int,
        on_done: Callable[[List[TimingRecord], TimingSummary], None],
        *,
        rng=None,
        on_record: Optional[Callable[[TimingRecord], None]] = None,
    ) -> None:
        if repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        self.runtime = runtime
        self.config = config
        self.repetitions = repetitions
        self.on_done = on_done
        self.on_record = on_record
        self.rng = rng
        self.records: List[TimingRecord] = []
        self.association: Optional[ProxyAssociation] = None

    def start(self) -> None:
        if self.config.mode == Mode.WARM:
            self.association = ProxyAssociation(self.runtime, self.config.proxy)
            self.association.open(lambda _a: self._next(), self._association_failed)
        else:
            self._next()

    def _association_failed(self, exc: Exception) -> None:
        for _ in range(self.repetitions):
            self.records.append(TimingRecord(self.config.mode.value, None, error=f"association-failure: {exc}"))
        self._done()

    def _next(self) -> None:
        if len(self.records) >= self.repetitions:
            self._done()
            return
        kwargs = {"association": self.association}
        if self.rng is not None:
            kwargs["rng"] = self.rng
        holder = {}

        def complete(record: TimingRecord) -> None:
            holder["session"].close()
            self.records.append(record)
            if self.on_record is not None:
                self.on_record(record)
            # start the next repetition from a fresh stack frame
            self.runtime.call_later(0, self._next)

        holder["session"] = ClientSession(self.runtime, self.config, complete, **kwargs)
        holder["session"].start()

    def _done(self) -> None:
        if self.association is not None:
            self.association.close()
        self.on_done(self.records, summarize(self.config.mode.value, self.records))


def run_timing_suite(
    config: ConnectConfig,
    repetitions: int,
    *,
    on_record: Optional[Callable[[TimingRecord], None]] = None,
) -> Tuple[List[TimingRecord], TimingSummary]:
    """Blocking variant over real sockets."""
    from ..runtime import AsyncioRuntime

    async def run():
        loop = asyncio.get_running_loop()
        done = loop.create_future()
        suite = TimingSuite(AsyncioRuntime(loop), config, repetitions, lambda recs, summ: done.set_result((recs, summ)), on_record=on_record)
        suite.start()
        return await done

    return asyncio.run(run())


def connect(config: ConnectConfig, timeout_s: float = 30.0) -> Tuple[ClientSession, TimingRecord]:
    """Blocking single connection over real sockets.

    The returned session is closed; its record and negotiated state remain
    readable. Use :class:`ClientSession` directly to keep exchanging data.
    """
    from ..runtime import AsyncioRuntime

    async def run():
        loop = asyncio.get_running_loop()
        done = loop.create_future()
        session = ClientSession(AsyncioRuntime(loop), config, lambda rec: done.done() or done.set_result(rec))
        session.start()
        try:
            record = await asyncio.wait_for(done, timeout_s)
        finally:
            session.close()
        return session, record

    return asyncio.run(run())
