import json

import pytest
from hypothesis import given, settings, strategies as st

from quicsocks.endpoint import ConnectConfig, Mode, TimingRecord
from quicsocks.endpoint.timing import TimingSuite, summarize
from quicsocks.scenarios import REFERENCE_TIMES, build_testbed, latency_topology, run_scenario

NO_DIRECT = "\n".join(line for line in latency_topology().splitlines() if "client server" not in line)


@pytest.mark.parametrize("scenario,retry,expected", REFERENCE_TIMES)
def test_connect_times_in_logical_time(scenario, retry, expected):
    record = run_scenario(scenario, retry=retry).record
    assert record.ok and record.t_connect_ms == expected


def test_cold_includes_association_setup():
    record = run_scenario("cold").record
    assert record.t_connect_ms == 150.0


def test_direct_handshake_is_one_round_trip_after_initial():
    result = run_scenario("status_quo")
    sends = [e for e in result.trace.of_kind("send") if e.sender == "client" and e.tag.startswith("quic:INITIAL")]
    assert len(sends) == 1 and result.record.t_connect_ms - sends[0].time == 60.0


def test_retry_policy_one_retry_per_connection():
    result = run_scenario("status_quo", retry=True)
    assert result.testbed.server.retries_sent == 1
    assert result.record.retry_occurred


def test_proxied_retry_invisible_to_client():
    result = run_scenario("proposal", retry=True)
    assert result.testbed.server.retries_sent == 1
    assert not result.record.retry_occurred
    assert not [e for e in result.trace.of_kind("deliver") if e.dst[0] == "10.0.0.1" and "RETRY" in e.tag]


@pytest.mark.parametrize("retry", [False, True])
@pytest.mark.parametrize("probe_early", [False, True])
def test_migration_moves_all_appdata_to_direct(retry, probe_early):
    result = run_scenario("proposal", retry=retry, migrate=True, probe_early=probe_early, send_after=5)
    rec = result.record
    assert rec.ok and rec.migrated and rec.t_migrate_ms >= rec.t_connect_ms
    appdata = [e for e in result.trace.of_kind("send") if e.sender == "client" and "APPDATA" in e.tag]
    assert len(appdata) == 5
    assert all(e.time >= rec.t_migrate_ms and e.dst == ("10.0.0.3", 4433) and e.tag.startswith("quic:") for e in appdata)
    assert sorted(result.session.received) == sorted(f"message {i}".encode() for i in range(5))


@pytest.mark.parametrize("retry", [False, True])
def test_early_probe_migrates_within_one_direct_rtt(retry):
    rec = run_scenario("proposal", retry=retry, migrate=True, probe_early=True).record
    assert rec.t_migrate_ms - rec.t_connect_ms <= 60.0


def test_migration_soft_fails_when_direct_path_blocked():
    result = run_scenario("proposal", topology=NO_DIRECT, migrate=True, probe_early=True, send_after=3)
    rec = result.record
    assert rec.ok and not rec.migrated and rec.t_migrate_ms is None
    assert rec.t_connect_ms == 60.0
    appdata = [e for e in result.trace.of_kind("send") if e.sender == "client" and "APPDATA" in e.tag]
    assert len(appdata) == 3 and all(e.tag.startswith("socks:") for e in appdata)
    assert len(result.session.received) == 3


def test_hundred_concurrent_clients_complete():
    bed = build_testbed(retry=True, seed=7)
    records = []
    for i in range(100):
        mode = (Mode.DEFAULT, Mode.COLD, Mode.WARM)[i % 3]
        session = bed.session(bed.config(mode, migration=i % 2 == 0), records.append)
        bed.net.call_later(i * 0.5, session.start)
    bed.net.run_until_quiescent(60_000)
    assert len(records) == 100 and all(r.ok for r in records)
    assert bed.server.handshakes_completed == 100
    assert bed.server.retries_sent == 100


def test_handshake_timeout_when_server_silent():
    bed = build_testbed()
    bed.server.close()
    records = []
    session = bed.session(bed.config(Mode.DEFAULT, handshake_timeout_ms=2000), records.append)
    bed.net.call_later(0, session.start)
    bed.net.run_until_quiescent(60_000)
    (rec,) = records
    assert not rec.ok and "timeout" in rec.error


def test_nxdomain_surfaces_as_error():
    bed = build_testbed()
    cfg = ConnectConfig("missing.example.test", 4433, mode=Mode.COLD, proxy=bed.proxy_address)
    records = []
    session = bed.session(cfg, records.append)
    bed.net.call_later(0, session.start)
    bed.net.run_until_quiescent(60_000)
    assert "nxdomain" in records[0].error


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(mode=Mode.COLD),
        dict(mode=Mode.WARM),
        dict(mode=Mode.DEFAULT),
        dict(mode=Mode.DEFAULT, resolver=("10.0.0.2", 53), port=0),
        dict(mode="bogus", resolver=("10.0.0.2", 53)),
    ],
)
def test_connect_config_validation(kwargs):
    port = kwargs.pop("port", 4433)
    with pytest.raises(ValueError):
        ConnectConfig("www.example.test", port, **kwargs)


def test_ip_target_needs_no_resolver():
    assert ConnectConfig("10.0.0.3", 4433).mode == Mode.DEFAULT


def test_timing_record_json():
    rec = TimingRecord("warm", 60.0, retry_occurred=False, migrated=True, t_migrate_ms=90.0)
    assert json.loads(rec.to_json()) == {
        "error": None,
        "migrated": True,
        "mode": "warm",
        "retry_occurred": False,
        "t_connect_ms": 60.0,
        "t_migrate_ms": 90.0,
    }


def suite_in_sim(mode, reps, **bed_kw):
    bed = build_testbed(**bed_kw)
    out = {}
    suite = TimingSuite(bed.net.host("client"), bed.config(mode), reps, lambda recs, summ: out.update(records=recs, summary=summ))
    bed.net.call_later(0, suite.start)
    bed.net.run_until_quiescent(600_000)
    return out["records"], out["summary"]


def test_single_repetition_min_equals_median():
    records, summary = suite_in_sim(Mode.WARM, 1)
    assert summary.count == 1 and summary.min_ms == summary.median_ms == 60.0


@pytest.mark.parametrize("mode,expected", [(Mode.DEFAULT, 90.0), (Mode.COLD, 150.0), (Mode.WARM, 60.0)])
def test_suite_repetitions_in_sim(mode, expected):
    records, summary = suite_in_sim(mode, 5)
    assert len(records) == 5 and summary.failures == 0
    assert summary.min_ms == summary.median_ms == expected


def test_repetitions_must_be_positive():
    with pytest.raises(ValueError):
        TimingSuite(None, ConnectConfig("10.0.0.3", 4433), 0, lambda *a: None)


@settings(max_examples=100)
@given(st.lists(st.one_of(st.none(), st.floats(0.01, 1e4)), min_size=1, max_size=40))
def test_summary_excludes_failures(values):
    records = [TimingRecord("default", v, error=None if v is not None else "x") for v in values]
    summary = summarize("default", records)
    good = sorted(v for v in values if v is not None)
    assert summary.count == len(good) and summary.failures == len(values) - len(good)
    if good:
        assert summary.min_ms == good[0] and summary.min_ms <= summary.median_ms <= good[-1]
    else:
        assert summary.min_ms is None and summary.median_ms is None
