"""qsk-dns: fixture DNS servers, one-shot queries and resolver discovery."""
import argparse
import asyncio
import json
import logging
import sys

from ..cliutil import parse_addr, setup_logging, wait_for_shutdown
from ..runtime import AsyncioRuntime
from .discovery import DiscoveryTimeout, discover_resolver
from .message import RType
from .server import AuthoritativeServer, ForwardingResolver
from .stub import ResolutionError, resolve
from .zone import Zone

logger = logging.getLogger("quicsocks.dns")


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="qsk-dns", description="Minimal DNS tooling for A/AAAA records.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    auth = sub.add_parser("serve", help="authoritative server answering from a zone file")
    auth.add_argument("--zone", required=True, help="file of 'name type ttl address' lines")
    auth.add_argument("--listen", type=parse_addr, default=("0.0.0.0", 53))
    auth.add_argument("--log", help="append one JSON observation per query here")

    fwd = sub.add_parser("forward", help="caching resolver forwarding to one upstream")
    fwd.add_argument("--listen", type=parse_addr, default=("0.0.0.0", 53))
    fwd.add_argument("--upstream", type=parse_addr, required=True)
    fwd.add_argument("--cache-only", action="store_true")

    q = sub.add_parser("query", help="resolve one name")
    q.add_argument("name")
    q.add_argument("--server", type=parse_addr, required=True)
    q.add_argument("--type", choices=["A", "AAAA"], default="A")
    q.add_argument("--timeout-ms", type=float, default=1000.0)
    q.add_argument("--retries", type=int, default=2)

    d = sub.add_parser("discover", help="find which resolver address reaches our authoritative server")
    d.add_argument("--zone", required=True, help="zone delegated to the logging authoritative server")
    d.add_argument("--resolver", type=parse_addr, required=True, help="the client's configured resolver")
    d.add_argument("--log", required=True, help="the authoritative server's observation log")
    d.add_argument("--deadline-ms", type=float, default=5000.0)

    args = p.parse_args(argv)
    setup_logging(args.verbose)

    if args.command == "query":
        try:
            res = resolve(args.name, args.server, args.timeout_ms, args.retries, RType[args.type])
        except ResolutionError as exc:
            print(json.dumps({"name": args.name, "error": str(exc).split(":", 1)[0]}))
            return 1
        print(json.dumps({"name": res.name, "addresses": list(res.addresses), "ttl_s": res.ttl_s}))
        return 0
    if args.command == "discover":
        try:
            obs = discover_resolver(args.zone, args.resolver, args.log, deadline_ms=args.deadline_ms)
        except DiscoveryTimeout as exc:
            print(json.dumps({"error": "discovery-timeout", "name": exc.name}))
            return 1
        print(
            json.dumps(
                {
                    "name": obs.name,
                    "resolver_ip": obs.resolver_ip,
                    "resolver_port": obs.resolver_port,
                    "configured_resolver": f"{args.resolver[0]}:{args.resolver[1]}",
                    "ts_ms": obs.ts_ms,
                }
            )
        )
        return 0

    async def run():
        rt = AsyncioRuntime(asyncio.get_running_loop())
        if args.command == "serve":
            server = AuthoritativeServer(rt, Zone.load(args.zone), args.listen, log_path=args.log)
        else:
            server = ForwardingResolver(rt, args.upstream, args.listen, cache_only=args.cache_only)
        logger.info("%s listening on %s:%d", args.command, *server.address)
        try:
            await wait_for_shutdown()
        finally:
            server.close()

    asyncio.run(run())
    return 0


if __name__ == "__main__":
    sys.exit(main())
