"""qsk-model: latency-model statistics and CDF points from an RTT CSV."""
import argparse
import csv
import json
import logging
import sys

from .model import METRICS, RttTriple, dataset_stats, emit_cdf, evaluate, load_csv

logger = logging.getLogger("quicsocks.model")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="qsk-model", description="Latency model over RTT datasets.")
    parser.add_argument("--csv", help="dataset with node_id,rtt_dns_ms,rtt_server_ms,rtt_direct_ms")
    parser.add_argument("--raw", action="store_true", help="CSV holds five samples per edge (dns_1..5, server_1..5, direct_1..5)")
    parser.add_argument("--report", default="stats", help="'stats' or 'cdf:<metric>'")
    parser.add_argument("--triple", help="evaluate one node given as DNS,SERVER,DIRECT milliseconds")
    parser.add_argument("--out", help="output file (default stdout)")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING)

    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        if args.triple:
            dns, server, direct = (float(x) for x in args.triple.split(","))
            for r in evaluate(RttTriple("cli", dns, server, direct)):
                row = {
                    "scenario": r.scenario.value,
                    "retry": r.retry,
                    "latency_ms": r.latency_ms,
                    "savings_ms": r.savings_ms,
                    "savings_fraction": r.savings_fraction,
                }
                out.write(json.dumps(row) + "\n")
            return 0
        if not args.csv:
            parser.error("--csv or --triple is required")
        dataset = load_csv(args.csv, raw=args.raw)
        if args.report == "stats":
            json.dump(dataset_stats(dataset).as_dict(), out, indent=2)
            out.write("\n")
        elif args.report.startswith("cdf:"):
            metric = args.report[4:]
            if metric not in METRICS:
                parser.error(f"unknown metric {metric!r}; choose from {', '.join(sorted(METRICS))}")
            writer = csv.writer(out, lineterminator="\n")
            writer.writerow(["value", "fraction"])
            for value, fraction in emit_cdf(dataset, metric):
                writer.writerow([value, fraction])
        else:
            parser.error("--report must be 'stats' or 'cdf:<metric>'")
    except ValueError as exc:
        print(f"qsk-model: {exc}", file=sys.stderr)
        return 2
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
