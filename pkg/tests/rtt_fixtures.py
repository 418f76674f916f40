"""Synthetic RTT datasets with known composition and a brute-force recount."""
import random

from quicsocks.latmodel import RttTriple

# (count, direct - server margin in ms); cumulative shares at 5/10/40/50 ms
# are 510, 367, 72 and 38 of 1000 nodes.
KNOWN_MARGINS = [(38, 55.0), (34, 45.0), (295, 20.0), (143, 7.0), (250, 0.0), (240, -12.0)]
KNOWN_FRACTIONS = {5.0: 0.51, 10.0: 0.367, 40.0: 0.072, 50.0: 0.038}


def known_fraction_dataset(seed=0):
    rng = random.Random(seed)
    nodes = []
    for count, margin in KNOWN_MARGINS:
        for _ in range(count):
            server = float(rng.randint(5, 120))
            direct = server + margin
            if direct < 0:
                server, direct = server - direct, 0.0
            nodes.append(RttTriple(f"n{len(nodes)}", float(rng.randint(1, 40)), server, direct))
    rng.shuffle(nodes)
    return nodes


def random_dataset(seed, n):
    rng = random.Random(seed)
    return [
        RttTriple(f"r{i}", rng.choice([0.0, rng.uniform(0, 80)]), round(rng.uniform(0, 200), 1), round(rng.uniform(0, 200), 1))
        for i in range(n)
    ]


def recount(nodes):
    """Plain loops over raw fields, independent of the library's helpers."""
    n = len(nodes)

    def share(pred):
        hits = 0
        for t in nodes:
            if pred(t):
                hits += 1
        return hits / n

    return {
        "margin": {th: share(lambda t, th=th: t.rtt_direct_ms - t.rtt_server_ms >= th) for th in (5.0, 10.0, 40.0, 50.0)},
        "dns_below_10": share(lambda t: t.rtt_dns_ms < 10.0),
        "no_retry": {th: share(lambda t, th=th: t.rtt_direct_ms - t.rtt_server_ms >= th) for th in (15.0, 30.0)},
        "retry": {th: share(lambda t, th=th: 2 * (t.rtt_direct_ms - t.rtt_server_ms) >= th) for th in (30.0, 60.0)},
    }


def brute_cdf(values):
    n = len(values)
    return [(v, sum(1 for w in values if w <= v) / n) for v in sorted(set(values))]
