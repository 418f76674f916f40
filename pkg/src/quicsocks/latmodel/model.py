"""Connection-establishment latency model and dataset statistics.

Latency to a usable connection, DNS included:

=============  =========================  ===========================
scenario       no retry                   retry
=============  =========================  ===========================
status quo     rtt_dns + rtt_direct       rtt_dns + 2 * rtt_direct
proposal       rtt_dns + rtt_server       rtt_dns + 2 * rtt_server
=============  =========================  ===========================
"""
import csv
import enum
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Sequence, TextIO, Tuple, Union

MARGIN_THRESHOLDS_MS = (5.0, 10.0, 40.0, 50.0)
FAST_DNS_THRESHOLD_MS = 10.0
SAVINGS_THRESHOLDS_MS = {False: (15.0, 30.0), True: (30.0, 60.0)}
RAW_SAMPLES = 5


class Scenario(str, enum.Enum):
    STATUS_QUO = "status_quo"
    PROPOSAL = "proposal"


@dataclass(frozen=True)
class RttTriple:
    node_id: str
    rtt_dns_ms: float
    rtt_server_ms: float
    rtt_direct_ms: float

    def __post_init__(self) -> None:
        for name in ("rtt_dns_ms", "rtt_server_ms", "rtt_direct_ms"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value!r}")


def model_latency(triple: RttTriple, scenario: Union[Scenario, str], retry: bool) -> float:
    scenario = Scenario(scenario)
    hop = triple.rtt_direct_ms if scenario == Scenario.STATUS_QUO else triple.rtt_server_ms
    return triple.rtt_dns_ms + (2 if retry else 1) * hop


@dataclass(frozen=True)
class ModelResult:
    scenario: Scenario
    retry: bool
    latency_ms: float
    savings_ms: float
    savings_fraction: float


@dataclass(frozen=True)
class Savings:
    no_retry_ms: float
    retry_ms: float
    no_retry_fraction: float
    retry_fraction: float


def _fraction(saved: float, baseline: float) -> float:
    return saved / baseline if baseline else 0.0


def savings(triple: RttTriple) -> Savings:
    margin = triple.rtt_direct_ms - triple.rtt_server_ms
    return Savings(
        no_retry_ms=margin,
        retry_ms=2 * margin,
        no_retry_fraction=_fraction(margin, model_latency(triple, Scenario.STATUS_QUO, False)),
        retry_fraction=_fraction(2 * margin, model_latency(triple, Scenario.STATUS_QUO, True)),
    )


def evaluate(triple: RttTriple) -> List[ModelResult]:
    """All four model cells; savings are relative to the status quo at the same retry flag."""
    out = []
    for retry in (False, True):
        base = model_latency(triple, Scenario.STATUS_QUO, retry)
        for scenario in Scenario:
            lat = model_latency(triple, scenario, retry)
            saved = base - lat
            out.append(ModelResult(scenario, retry, lat, saved, _fraction(saved, base)))
    return out


METRICS: Dict[str, Callable[[RttTriple], float]] = {
    "rtt_dns": lambda t: t.rtt_dns_ms,
    "rtt_server": lambda t: t.rtt_server_ms,
    "rtt_direct": lambda t: t.rtt_direct_ms,
    "handshake_status_quo": lambda t: model_latency(t, Scenario.STATUS_QUO, False),
    "handshake_status_quo_retry": lambda t: model_latency(t, Scenario.STATUS_QUO, True),
    "handshake_proposal": lambda t: model_latency(t, Scenario.PROPOSAL, False),
    "handshake_proposal_retry": lambda t: model_latency(t, Scenario.PROPOSAL, True),
}


def emit_cdf(dataset: Sequence[RttTriple], metric: str) -> List[Tuple[float, float]]:
    """Empirical CDF points (value, k/n) where k counts nodes with metric <= value."""
    if metric not in METRICS:
        raise KeyError(f"unknown metric {metric!r}; choose from {sorted(METRICS)}")
    if not dataset:
        raise ValueError("empty dataset")
    values = sorted(METRICS[metric](t) for t in dataset)
    n = len(values)
    points = []
    for i, v in enumerate(values):
        if i + 1 < n and values[i + 1] == v:
            continue
        points.append((v, (i + 1) / n))
    return points


@dataclass
class DatasetReport:
    n: int
    margin_at_least: Dict[float, float]
    rtt_dns_below_10: float
    savings_no_retry_at_least: Dict[float, float]
    savings_retry_at_least: Dict[float, float]
    cdfs: Dict[str, List[Tuple[float, float]]] = field(repr=False)

    def as_dict(self, include_cdfs: bool = True) -> dict:
        d = {
            "n": self.n,
            "margin_at_least": {_key(k): v for k, v in self.margin_at_least.items()},
            "rtt_dns_below_10": self.rtt_dns_below_10,
            "savings_no_retry_at_least": {_key(k): v for k, v in self.savings_no_retry_at_least.items()},
            "savings_retry_at_least": {_key(k): v for k, v in self.savings_retry_at_least.items()},
        }
        if include_cdfs:
            d["cdfs"] = {m: [list(p) for p in pts] for m, pts in self.cdfs.items()}
        return d


def _key(x: float) -> str:
    return f"{x:g}"


def _share(dataset: Sequence[RttTriple], predicate: Callable[[RttTriple], bool]) -> float:
    return sum(1 for t in dataset if predicate(t)) / len(dataset)


def dataset_stats(dataset: Sequence[RttTriple]) -> DatasetReport:
    if not dataset:
        raise ValueError("dataset_stats needs at least one node")
    return DatasetReport(
        n=len(dataset),
        margin_at_least={
            th: _share(dataset, lambda t, th=th: t.rtt_direct_ms - t.rtt_server_ms >= th) for th in MARGIN_THRESHOLDS_MS
        },
        rtt_dns_below_10=_share(dataset, lambda t: t.rtt_dns_ms < FAST_DNS_THRESHOLD_MS),
        savings_no_retry_at_least={
            th: _share(dataset, lambda t, th=th: savings(t).no_retry_ms >= th) for th in SAVINGS_THRESHOLDS_MS[False]
        },
        savings_retry_at_least={
            th: _share(dataset, lambda t, th=th: savings(t).retry_ms >= th) for th in SAVINGS_THRESHOLDS_MS[True]
        },
        cdfs={m: emit_cdf(dataset, m) for m in METRICS},
    )


def _rows(source: Union[str, TextIO]) -> Iterable[dict]:
    if isinstance(source, str):
        with open(source, newline="") as fh:
            yield from csv.DictReader(fh)
    else:
        yield from csv.DictReader(source)


def load_csv(source: Union[str, TextIO], raw: bool = False) -> List[RttTriple]:
    """Read ``node_id,rtt_dns_ms,rtt_server_ms,rtt_direct_ms`` rows.

    With ``raw=True`` the columns are ``node_id`` plus ``dns_1..dns_5``,
    ``server_1..server_5`` and ``direct_1..direct_5``; each edge is averaged.
    """
    out = []
    for lineno, row in enumerate(_rows(source), 2):
        try:
            if raw:
                avg = {
                    edge: sum(float(row[f"{edge}_{i}"]) for i in range(1, RAW_SAMPLES + 1)) / RAW_SAMPLES
                    for edge in ("dns", "server", "direct")
                }
                out.append(RttTriple(row["node_id"], avg["dns"], avg["server"], avg["direct"]))
            else:
                out.append(
                    RttTriple(row["node_id"], float(row["rtt_dns_ms"]), float(row["rtt_server_ms"]), float(row["rtt_direct_ms"]))
                )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"row {lineno}: {exc}") from None
    return out


def dump_csv(dataset: Sequence[RttTriple]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["node_id", "rtt_dns_ms", "rtt_server_ms", "rtt_direct_ms"])
    for t in dataset:
        writer.writerow([t.node_id, repr(t.rtt_dns_ms), repr(t.rtt_server_ms), repr(t.rtt_direct_ms)])
    return buf.getvalue()
