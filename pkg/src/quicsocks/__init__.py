"""QuicSocks: QUIC connection setup through a resolving SOCKS proxy."""

__version__ = "0.1.0"
