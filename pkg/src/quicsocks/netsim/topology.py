"""Plain-text topology specs.

One directive per line, ``#`` starts a comment::

    seed 7
    host client 10.0.0.1
    host proxy 10.0.0.2
    link client proxy 15 15
    link proxy server 15 15 0.01

Hosts named in a ``link`` line without a ``host`` line are an error; host
pairs without a link are unreachable from each other.
"""
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple, Union

from .core import LinkProfile, Network, TopologyError


@dataclass
class TopologySpec:
    hosts: List[Tuple[str, Optional[str]]] = field(default_factory=list)
    links: List[LinkProfile] = field(default_factory=list)
    seed: int = 0

    @classmethod
    def parse(cls, text: str) -> "TopologySpec":
        spec = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            words = line.split()
            try:
                if words[0] == "seed" and len(words) == 2:
                    spec.seed = int(words[1])
                elif words[0] == "host" and len(words) in (2, 3):
                    spec.hosts.append((words[1], words[2] if len(words) == 3 else None))
                elif words[0] == "link" and len(words) in (4, 5, 6):
                    a, b = words[1], words[2]
                    d_ab = float(words[3])
                    d_ba = float(words[4]) if len(words) >= 5 else d_ab
                    loss = float(words[5]) if len(words) == 6 else 0.0
                    spec.links.append(LinkProfile(a, b, d_ab, d_ba, loss))
                else:
                    raise TopologyError(f"unrecognised directive {words[0]!r}")
            except TopologyError as exc:
                raise TopologyError(f"line {lineno}: {exc}") from None
            except ValueError as exc:
                raise TopologyError(f"line {lineno}: {exc}") from None
        return spec


def build_topology(
    spec: Union[TopologySpec, str],
    *,
    seed: Optional[int] = None,
    classifier: Optional[Callable[[bytes], str]] = None,
) -> Network:
    if isinstance(spec, str):
        spec = TopologySpec.parse(spec)
    net = Network(seed=spec.seed if seed is None else seed, classifier=classifier)
    for name, ip in spec.hosts:
        net.add_host(name, ip)
    for link in spec.links:
        net.add_link(link)
    return net
