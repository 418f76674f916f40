"""Zone fixtures: plain-text lines ``name type ttl address``.

A leftmost ``*`` label matches any non-empty sequence of labels below its
parent, so ``*.probe.test`` answers every random discovery label.
"""
import ipaddress
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .message import RType, ResourceRecord, normalize_name


class ZoneError(ValueError):
    pass


@dataclass
class Zone:
    records: Dict[Tuple[str, RType], List[Tuple[int, str]]] = field(default_factory=dict)

    def add(self, name: str, rtype: RType, ttl: int, address: str) -> None:
        family = ipaddress.ip_address(address).version
        if (rtype == RType.A) != (family == 4):
            raise ZoneError(f"{address} does not match record type {rtype.name}")
        if ttl < 0:
            raise ZoneError("negative ttl")
        self.records.setdefault((normalize_name(name), rtype), []).append((ttl, address))

    @classmethod
    def parse(cls, text: str) -> "Zone":
        zone = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].split(";", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ZoneError(f"line {lineno}: expected 'name type ttl address'")
            name, rtype, ttl, address = parts
            try:
                zone.add(name, RType[rtype.upper()], int(ttl), address)
            except (KeyError, ValueError) as exc:
                raise ZoneError(f"line {lineno}: {exc}") from None
        return zone

    @classmethod
    def load(cls, path) -> "Zone":
        with open(path) as fh:
            return cls.parse(fh.read())

    def _names(self):
        return {name for name, _ in self.records}

    def _owner(self, name: str) -> Optional[str]:
        if name in self._names():
            return name
        labels = name.split(".")
        for i in range(1, len(labels)):
            candidate = "*." + ".".join(labels[i:])
            if candidate in self._names():
                return candidate
        return None

    def lookup(self, name: str, rtype: RType) -> Optional[List[ResourceRecord]]:
        """Records for ``name``; None when the name does not exist at all."""
        owner = self._owner(normalize_name(name))
        if owner is None:
            return None
        return [ResourceRecord(name, rtype, ttl, addr) for ttl, addr in self.records.get((owner, rtype), [])]
