"""qsk-client and qsk-server entry points."""
import argparse
import asyncio
import json
import logging
import sys

from ..cliutil import parse_addr, setup_logging, wait_for_shutdown
from ..runtime import AsyncioRuntime
from .client import ConnectConfig, Mode
from .server import DemoServer
from .timing import run_timing_suite

logger = logging.getLogger("quicsocks.client")


def client_main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="qsk-client", description="Time connection establishment, directly or via the proxy.")
    p.add_argument("--target", required=True, help="name:port of the server")
    p.add_argument("--proxy", type=parse_addr, help="proxy control address:port")
    p.add_argument("--resolver", type=parse_addr, help="resolver for default mode (address:port)")
    p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.DEFAULT.value)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--migrate", action="store_true")
    p.add_argument("--probe-early", action="store_true")
    p.add_argument("--timeout-s", type=float, default=10.0, help="handshake timeout")
    p.add_argument("--out", help="write JSON lines here instead of stdout")
    p.add_argument("-v", "--verbose", action="store_true")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)

    name, port = parse_addr(args.target)
    try:
        config = ConnectConfig(
            name,
            port,
            mode=Mode(args.mode),
            proxy=args.proxy,
            resolver=args.resolver,
            migration=args.migrate,
            probe_early=args.probe_early,
            handshake_timeout_ms=args.timeout_s * 1000.0,
        )
    except ValueError as exc:
        p.error(str(exc))
    if args.reps < 1:
        p.error("--reps must be >= 1")
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        records, summary = run_timing_suite(config, args.reps, on_record=lambda r: out.write(r.to_json() + "\n"))
        out.write(json.dumps(summary.as_dict(), sort_keys=True) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0 if summary.failures == 0 else 1


def server_main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="qsk-server", description="Demo miniquic server that echoes application data.")
    p.add_argument("--listen", type=parse_addr, default=("0.0.0.0", 4433))
    p.add_argument("--retry", choices=["on", "off"], default="off")
    p.add_argument("-v", "--verbose", action="store_true")
    args = p.parse_args(argv)
    setup_logging(args.verbose)

    async def run():
        server = DemoServer(AsyncioRuntime(asyncio.get_running_loop()), args.listen, retry=args.retry == "on")
        logger.info("serving on %s:%d (retry %s)", *server.address, args.retry)
        try:
            await wait_for_shutdown()
        finally:
            logger.info("%d handshakes, %d retries", server.handshakes_completed, server.retries_sent)
            server.close()

    asyncio.run(run())
    return 0


if __name__ == "__main__":
    sys.exit(client_main())
