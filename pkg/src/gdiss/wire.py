"""Canonical block encoding and stream framing.

One block, one byte layout, bit-exact everywhere:

    version(1)=0x01 | creator(32) | ptr-count(2 BE)
      | pointers, each creator(32) | digest(32) | signature(64),
        sorted by (creator, digest)
      | payload-len(4 BE) | payload
      | self-signature(64) | self-digest(32)

The self-digest is SHA-256 over the (pointers, payload) section only, so
it matches what the creator signed.  A zero payload length means "no
payload" on an initial block (no pointers) and the empty byte string on
any other block.  Stream frames are the same bytes behind a 4-byte
big-endian length prefix.
"""

from __future__ import annotations

import struct

from .identity import (
    ID_LEN,
    SIG_LEN,
    AgentId,
    SignatureScheme,
    hash_bytes,
)

VERSION = 0x01
POINTER_LEN = ID_LEN + 32 + SIG_LEN
MAX_FRAME = 1 << 20  # 1 MiB default ceiling


class WireError(ValueError):
    """Decode failure with a stable error code."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


def encode_pointer(creator: AgentId, digest: bytes, signature: bytes) -> bytes:
    return creator.data + digest + signature


def sort_pointer_triples(
    pointers: list[tuple[AgentId, bytes, bytes]],
) -> list[tuple[AgentId, bytes, bytes]]:
    return sorted(pointers, key=lambda t: (t[0].data, t[1]))


def digest_preimage(
    pointers: list[tuple[AgentId, bytes, bytes]], payload: bytes | None
) -> bytes:
    """Bytes the creator hashes and signs: pointers plus payload."""
    parts = [struct.pack(">H", len(pointers))]
    for creator, digest, signature in sort_pointer_triples(pointers):
        parts.append(encode_pointer(creator, digest, signature))
    body = payload if payload is not None else b""
    parts.append(struct.pack(">I", len(body)))
    parts.append(body)
    return b"".join(parts)


def block_digest(
    pointers: list[tuple[AgentId, bytes, bytes]], payload: bytes | None
) -> bytes:
    return hash_bytes(digest_preimage(pointers, payload))


def encode_block_fields(
    creator: AgentId,
    pointers: list[tuple[AgentId, bytes, bytes]],
    payload: bytes | None,
    signature: bytes,
    digest: bytes,
) -> bytes:
    return (
        bytes([VERSION])
        + creator.data
        + digest_preimage(pointers, payload)
        + signature
        + digest
    )


def decode_block_fields(
    data: bytes,
    scheme: SignatureScheme,
    max_len: int = MAX_FRAME,
    verify: bool = True,
) -> tuple[AgentId, list[tuple[AgentId, bytes, bytes]], bytes | None, bytes, bytes]:
    """Parse and check one encoded block.

    Returns (creator, pointers, payload, signature, digest).  Raises
    WireError with codes: oversize, truncated, bad-version, trailing-bytes,
    digest-mismatch, bad-signature, non-canonical.
    """
    if len(data) > max_len:
        raise WireError("oversize", f"{len(data)} bytes exceeds limit {max_len}")
    off = 0

    def take(n: int, what: str) -> bytes:
        nonlocal off
        if off + n > len(data):
            raise WireError("truncated", f"short read of {what}")
        out = data[off : off + n]
        off += n
        return out

    version = take(1, "version")[0]
    if version != VERSION:
        raise WireError("bad-version", f"unsupported version {version}")
    creator = AgentId(take(ID_LEN, "creator"))
    (ptr_count,) = struct.unpack(">H", take(2, "pointer count"))
    pointers: list[tuple[AgentId, bytes, bytes]] = []
    for _ in range(ptr_count):
        p_creator = AgentId(take(ID_LEN, "pointer creator"))
        p_digest = take(32, "pointer digest")
        p_sig = take(SIG_LEN, "pointer signature")
        pointers.append((p_creator, p_digest, p_sig))
    (payload_len,) = struct.unpack(">I", take(4, "payload length"))
    body = take(payload_len, "payload")
    payload: bytes | None
    if payload_len == 0 and ptr_count == 0:
        payload = None
    else:
        payload = body
    signature = take(SIG_LEN, "signature")
    digest = take(32, "digest")
    if off != len(data):
        raise WireError("trailing-bytes", f"{len(data) - off} bytes after block")

    if pointers != sort_pointer_triples(pointers):
        raise WireError("non-canonical", "pointer list not in canonical order")
    if block_digest(pointers, payload) != digest:
        raise WireError("digest-mismatch", "self-digest does not match content")
    if verify:
        if not scheme.verify(digest, signature, creator):
            raise WireError("bad-signature", "self-signature rejected")
        for p_creator, p_digest, p_sig in pointers:
            if not scheme.verify(p_digest, p_sig, p_creator):
                raise WireError("bad-signature", "pointer signature rejected")
    return creator, pointers, payload, signature, digest


def frame(data: bytes) -> bytes:
    """Length-prefix one encoded block for a byte stream."""
    return struct.pack(">I", len(data)) + data


def deframe(buffer: bytes, max_len: int = MAX_FRAME) -> tuple[bytes | None, bytes]:
    """Pop one complete frame off the buffer; returns (frame or None, rest)."""
    if len(buffer) < 4:
        return None, buffer
    (length,) = struct.unpack(">I", buffer[:4])
    if length > max_len:
        raise WireError("oversize", f"frame of {length} bytes exceeds limit {max_len}")
    if len(buffer) < 4 + length:
        return None, buffer
    return buffer[4 : 4 + length], buffer[4 + length :]
