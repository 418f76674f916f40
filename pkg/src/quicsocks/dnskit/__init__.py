"""Minimal DNS: codec, stub resolver, fixture servers and resolver discovery."""
from .discovery import DiscoveryTimeout, ResolverDiscovery, discover_resolver, observations_from_log, random_label
from .message import (
    DnsDecodeError,
    DnsEncodeError,
    DnsMessage,
    Question,
    Rcode,
    ResourceRecord,
    RType,
    decode_message,
    encode_message,
)
from .server import AuthoritativeServer, ForwardingResolver, ResolverObservation
from .stub import (
    NoAnswer,
    NxDomain,
    Resolution,
    ResolutionError,
    ResolutionTimeout,
    ServerFailure,
    StubResolver,
    clamp_ttl,
    resolve,
)
from .zone import Zone, ZoneError

__all__ = [
    "AuthoritativeServer",
    "DiscoveryTimeout",
    "DnsDecodeError",
    "DnsEncodeError",
    "DnsMessage",
    "ForwardingResolver",
    "NoAnswer",
    "NxDomain",
    "Question",
    "RType",
    "Rcode",
    "Resolution",
    "ResolutionError",
    "ResolutionTimeout",
    "ResolverDiscovery",
    "ResolverObservation",
    "ResourceRecord",
    "ServerFailure",
    "StubResolver",
    "Zone",
    "ZoneError",
    "clamp_ttl",
    "decode_message",
    "discover_resolver",
    "encode_message",
    "observations_from_log",
    "random_label",
    "resolve",
]
