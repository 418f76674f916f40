import pytest
from hypothesis import given, settings, strategies as st

from quicsocks.netsim import LinkProfile, Network, TopologyError, TopologySpec, build_topology
from quicsocks.scenarios import latency_topology, run_scenario

TWO_HOSTS = """
host a 10.0.0.1
host b 10.0.0.2
link a b 7 3
"""


def pinger(net, count=3, gap=1.0):
    a, b = net.host("a"), net.host("b")
    got = []
    b_sock = b.bind_udp((b.ip, 9), lambda data, src: got.append((net.now, data, src)))
    a_sock = a.bind_udp(None, lambda data, src: None)
    for i in range(count):
        a.call_later(i * gap, lambda i=i: a_sock.sendto(bytes([i]), b_sock.local_address))
    return got, a_sock, b_sock


def test_delay_fidelity_per_direction():
    net = build_topology(TWO_HOSTS)
    a, b = net.host("a"), net.host("b")
    seen = []
    sb = b.bind_udp((b.ip, 1), lambda d, s: (seen.append(("b", net.now)), sb.sendto(d, s)))
    sa = a.bind_udp((a.ip, 1), lambda d, s: seen.append(("a", net.now)))
    a.call_later(2.5, lambda: sa.sendto(b"x", sb.local_address))
    net.run_until_quiescent()
    assert seen == [("b", 9.5), ("a", 12.5)]


def test_rtts_of_latency_topology():
    net = build_topology(latency_topology(30, 30, 60))
    assert net.rtt("client", "proxy") == 30
    assert net.rtt("proxy", "server") == 30
    assert net.rtt("client", "server") == 60


def test_empty_network_has_empty_trace():
    trace = Network().run_until_quiescent()
    assert len(trace) == 0 and trace.quiescent


def test_fifo_tie_break():
    net = Network()
    h = net.add_host("h")
    order = []
    for i in range(20):
        h.call_later(5, lambda i=i: order.append(i))
    net.run_until_quiescent()
    assert order == list(range(20))


def test_time_never_decreases():
    net = build_topology(TWO_HOSTS)
    times = []
    got, *_ = pinger(net, count=10, gap=0.3)
    orig = net.call_at

    def spy(when, cb, daemon=False):
        return orig(when, lambda: (times.append(net.now), cb()), daemon)

    net.call_at = spy
    net.run_until_quiescent()
    assert times == sorted(times)


def test_unlinked_pair_is_unreachable():
    net = Network()
    a, b = net.add_host("a", "10.0.0.1"), net.add_host("b", "10.0.0.2")
    sb = b.bind_udp((b.ip, 1), lambda d, s: pytest.fail("delivered"))
    a.bind_udp(None, lambda d, s: None).sendto(b"x", sb.local_address)
    trace = net.run_until_quiescent()
    assert [e.kind for e in trace] == ["send", "drop"]
    assert trace.events[1].reason == "unreachable"


def test_same_host_delivery_is_instant():
    net = Network()
    h = net.add_host("h")
    seen = []
    s1 = h.bind_udp(None, lambda d, s: seen.append(net.now))
    h.call_later(4, lambda: h.bind_udp(None, lambda d, s: None).sendto(b"x", s1.local_address))
    net.run_until_quiescent()
    assert seen == [4]


def test_loss_one_never_delivers():
    net = build_topology(TWO_HOSTS.replace("link a b 7 3", "link a b 7 3 1.0"))
    got, *_ = pinger(net, count=50)
    trace = net.run_until_quiescent()
    assert got == []
    assert len(trace.of_kind("drop")) == 50 and not trace.of_kind("deliver")


def test_conservation():
    net = build_topology(TWO_HOSTS.replace("link a b 7 3", "link a b 7 3 0.4"), seed=3)
    got, *_ = pinger(net, count=200)
    trace = net.run_until_quiescent()
    sends = {e.datagram_id for e in trace.of_kind("send")}
    ends = [e.datagram_id for e in trace if e.kind in ("deliver", "drop")]
    assert sorted(ends) == sorted(sends)
    assert len(got) == len(trace.of_kind("deliver"))
    assert 0 < len(got) < 200


def test_port_unreachable_is_recorded_as_drop():
    net = build_topology(TWO_HOSTS)
    net.host("a").bind_udp(None, lambda d, s: None).sendto(b"x", ("10.0.0.2", 4242))
    trace = net.run_until_quiescent()
    assert trace.events[-1].kind == "drop" and trace.events[-1].reason == "port-unreachable"


def test_deadline_reports_pending():
    net = build_topology(TWO_HOSTS)
    pinger(net, count=5, gap=10)
    trace = net.run_until_quiescent(deadline_ms=15)
    assert not trace.quiescent and trace.pending_events > 0
    assert net.now == 15


def test_daemon_timers_do_not_block_quiescence():
    net = Network()
    h = net.add_host("h")
    ticks = []

    def tick():
        ticks.append(net.now)
        h.call_later(10, tick, daemon=True)

    h.call_later(10, tick, daemon=True)
    h.call_later(35, lambda: None)
    trace = net.run_until_quiescent()
    assert trace.quiescent and ticks == [10, 20, 30]


def test_stream_is_ordered_and_delayed():
    net = build_topology(TWO_HOSTS)
    a, b = net.host("a"), net.host("b")
    received = []
    closed = []

    def accept(stream):
        stream.set_handlers(lambda d: received.append((net.now, d)), lambda: closed.append(net.now))

    b.listen_tcp((b.ip, 80), accept)

    def connected(stream):
        stream.write(b"one")
        stream.write(b"two")
        stream.close()

    a.connect_tcp(("10.0.0.2", 80), connected)
    net.run_until_quiescent()
    # SYN 7, SYN-ACK 3, data 7 more
    assert received == [(17, b"one"), (17, b"two")]
    assert closed == [17]


def test_stream_refused_without_listener():
    net = build_topology(TWO_HOSTS)
    errors = []
    net.host("a").connect_tcp(("10.0.0.2", 80), lambda s: pytest.fail("connected"), errors.append)
    net.run_until_quiescent()
    assert len(errors) == 1 and isinstance(errors[0], ConnectionRefusedError)


def test_trace_jsonl_fields():
    net = build_topology(TWO_HOSTS)
    pinger(net, count=1)
    line = net.run_until_quiescent().to_jsonl().splitlines()[0]
    assert '"src": "10.0.0.1:49152"' in line and '"kind": "send"' in line


@pytest.mark.parametrize(
    "text",
    [
        "host a\nhost a",
        "host a\nhost b\nlink a b -1 1",
        "host a\nhost b\nlink a b 1 1 1.5",
        "host a\nlink a c 1",
        "host a\nhost b\nlink a b 1\nlink b a 2",
        "host a\nhost b\nlink a b x",
        "router a",
        "host a 10.0.0.1\nhost b 10.0.0.1",
    ],
)
def test_config_errors(text):
    with pytest.raises(TopologyError):
        build_topology(text)


def test_link_profile_defaults_symmetric():
    p = LinkProfile("a", "b", 4)
    assert p.delay_from("a") == p.delay_from("b") == 4


def test_spec_parse_comments_and_seed():
    spec = TopologySpec.parse("# comment\nseed 9\nhost a 10.0.0.1  # trailing\nhost b\nlink a b 2")
    assert spec.seed == 9 and len(spec.hosts) == 2 and spec.links[0].delay_ba_ms == 2


def test_zero_delay_handshake_at_time_zero():
    res = run_scenario("proposal", topology=latency_topology(0, 0, 0))
    assert res.record.t_connect_ms == 0
    res = run_scenario("status_quo", topology=latency_topology(0, 0, 0), retry=True)
    assert res.record.t_connect_ms == 0


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_lossy_runs_are_byte_identical(seed):
    def once():
        res = run_scenario("proposal", topology=latency_topology(30, 30, 60, loss=0.2), retry=True, seed=seed, migrate=True)
        return res.trace.to_jsonl()

    assert once() == once()
