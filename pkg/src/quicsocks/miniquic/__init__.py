"""A miniature QUIC-like protocol: stateless retry, a two-flight handshake and migration."""
from .connection import (
    AppDataReceived,
    ConnectionConfig,
    MigrationComplete,
    MigrationError,
    MigrationFailed,
    PathValidated,
    PeerMigrated,
    QuicConnection,
    RttEstimator,
)
from .handshake import (
    ConnectionClosed,
    HandshakeComplete,
    HandshakeState,
    Phase,
    RetryReceived,
    ServerPolicy,
    client_handshake_step,
    server_handshake_step,
)
from .packet import Frame, FrameType, Packet, PacketDecodeError, PacketType, decode_packet, encode_packet
from .server import QuicServer
from .tokens import RetryToken, TokenVerdict, issue_retry, validate_token

__all__ = [
    "AppDataReceived",
    "ConnectionClosed",
    "ConnectionConfig",
    "Frame",
    "FrameType",
    "HandshakeComplete",
    "HandshakeState",
    "MigrationComplete",
    "MigrationError",
    "MigrationFailed",
    "Packet",
    "PacketDecodeError",
    "PacketType",
    "PathValidated",
    "PeerMigrated",
    "Phase",
    "QuicConnection",
    "QuicServer",
    "RetryReceived",
    "RetryToken",
    "RttEstimator",
    "ServerPolicy",
    "TokenVerdict",
    "client_handshake_step",
    "decode_packet",
    "encode_packet",
    "issue_retry",
    "server_handshake_step",
    "validate_token",
]
