import pytest

from quicsocks.netsim import add_network_observer, check_no_spoofing

# Every simulated network built anywhere in the suite, with the number of
# datagrams audited for source-address integrity.
AUDIT = {"networks": 0, "sends": 0, "violations": 0}

# criterion number -> (passed, title, detail), filled by test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture(autouse=True)
def no_spoofed_sources():
    """Fail any test whose simulated traffic carries a foreign source address."""
    networks = []
    remove = add_network_observer(networks.append)
    yield
    remove()
    for net in networks:
        bad = check_no_spoofing(net.trace, net)
        AUDIT["networks"] += 1
        AUDIT["sends"] += len(net.trace.of_kind("send"))
        AUDIT["violations"] += len(bad)
        assert not bad, f"spoofed sources: {bad[:3]}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    write = terminalreporter.write_line
    terminalreporter.section("acceptance criteria")
    for number in range(1, 11):
        if number not in ACCEPTANCE:
            write(f"NOT RUN  criterion {number}")
            continue
        passed, title, detail = ACCEPTANCE[number]
        if number == 6:
            passed = passed and AUDIT["violations"] == 0
            detail += f"; suite audit {AUDIT['sends']} sends on {AUDIT['networks']} networks, {AUDIT['violations']} violations"
        write(f"{'PASS' if passed else 'FAIL'}     criterion {number}: {title} ({detail})")
