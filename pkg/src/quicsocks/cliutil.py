"""Small helpers shared by the command-line entry points."""
import argparse
import asyncio
import logging
import signal
from typing import Tuple


def parse_addr(text: str, default_host: str = "0.0.0.0") -> Tuple[str, int]:
    """Parse ``host:port``, ``[v6]:port`` or ``:port``."""
    host, sep, port = text.rpartition(":")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected host:port, got {text!r}")
    host = host.strip("[]") or default_host
    try:
        value = int(port)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad port in {text!r}") from None
    if not 0 <= value <= 0xFFFF:
        raise argparse.ArgumentTypeError(f"port out of range in {text!r}")
    return host, value


def setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


async def wait_for_shutdown() -> None:
    """Block until SIGINT or SIGTERM."""
    loop = asyncio.get_running_loop()
    stop = loop.create_future()
    for sig in (signal.SIGINT, signal.SIGTERM):
        try:
            loop.add_signal_handler(sig, lambda: stop.done() or stop.set_result(None))
        except (NotImplementedError, RuntimeError):
            pass
    await stop
