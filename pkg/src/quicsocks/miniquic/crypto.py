"""Toy key schedule.

This stands in for TLS 1.3 so the handshake has the same message flow. It
offers no confidentiality: anyone who sees both randoms can derive the key.
"""
import hashlib
import hmac

EMPTY_TRANSCRIPT = bytes(32)


def shared_secret(client_random: bytes, server_random: bytes) -> bytes:
    return hashlib.sha256(client_random + server_random).digest()


def forward_secure_key(shared: bytes) -> bytes:
    return hashlib.sha256(shared + b"fs").digest()


def extend_transcript(transcript: bytes, frame_bytes: bytes) -> bytes:
    """Chain one encoded handshake frame into the running digest."""
    return hashlib.sha256(transcript + frame_bytes).digest()


def fin_mac(key: bytes, transcript: bytes) -> bytes:
    return hmac.new(key, transcript, hashlib.sha256).digest()
