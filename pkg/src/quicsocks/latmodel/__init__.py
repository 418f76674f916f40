"""Analytical latency model and RTT dataset statistics."""
from .model import (
    METRICS,
    DatasetReport,
    ModelResult,
    RttTriple,
    Savings,
    Scenario,
    dataset_stats,
    dump_csv,
    emit_cdf,
    evaluate,
    load_csv,
    model_latency,
    savings,
)

__all__ = [
    "METRICS",
    "DatasetReport",
    "ModelResult",
    "RttTriple",
    "Savings",
    "Scenario",
    "dataset_stats",
    "dump_csv",
    "emit_cdf",
    "evaluate",
    "load_csv",
    "model_latency",
    "savings",
]
