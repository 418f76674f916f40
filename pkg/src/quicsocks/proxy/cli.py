"""qsk-proxy: run the proxy daemon on real sockets."""
import argparse
import asyncio
import logging
import signal
import sys

from ..cliutil import parse_addr, setup_logging, wait_for_shutdown
from ..runtime import AsyncioRuntime
from .core import NotifyMode
from .daemon import ProxyDaemon

logger = logging.getLogger("quicsocks.proxy")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qsk-proxy", description="SOCKS UDP relay that resolves names and relays handshakes.")
    p.add_argument("--listen-control", type=parse_addr, default=("0.0.0.0", 1080), help="TCP control address (default 0.0.0.0:1080)")
    p.add_argument("--listen-relay", type=parse_addr, default=None, help="UDP relay address; port 0 picks ephemeral ports")
    p.add_argument("--upstream-dns", type=parse_addr, required=True, help="recursive resolver address:port")
    p.add_argument("--notify", choices=[m.value for m in NotifyMode], default=NotifyMode.EARLY.value)
    p.add_argument("--idle-timeout-s", type=float, default=30.0)
    p.add_argument("--max-relays", type=int, default=4096)
    p.add_argument("--metrics-file", help="write metrics JSON here every few seconds and on exit")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


async def run(args) -> None:
    loop = asyncio.get_running_loop()
    relay_host, relay_port = args.listen_relay or (None, 0)
    if relay_host is None and args.listen_control[0] in ("0.0.0.0", ""):
        relay_host = "0.0.0.0"
    daemon = ProxyDaemon(
        AsyncioRuntime(loop),
        upstream_dns=args.upstream_dns,
        listen_control=args.listen_control,
        relay_host=relay_host,
        relay_base_port=relay_port,
        notify=NotifyMode(args.notify),
        idle_timeout_ms=args.idle_timeout_s * 1000.0,
        max_relays=args.max_relays,
    )
    logger.info("control on %s:%d, relays on %s", *daemon.control_address, daemon.relay_host)

    def dump() -> None:
        text = daemon.metrics_json()
        if args.metrics_file:
            with open(args.metrics_file, "w") as fh:
                fh.write(text + "\n")
        else:
            print(text, flush=True)

    try:
        loop.add_signal_handler(signal.SIGUSR1, dump)
    except (AttributeError, NotImplementedError):
        pass

    async def periodic():
        while True:
            await asyncio.sleep(5)
            if args.metrics_file:
                dump()

    ticker = loop.create_task(periodic())
    try:
        await wait_for_shutdown()
    finally:
        ticker.cancel()
        dump()
        daemon.close()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    asyncio.run(run(args))
    return 0


if __name__ == "__main__":
    sys.exit(main())
