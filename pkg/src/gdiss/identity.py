"""Agent identities, hashing, and signing.

Two interchangeable signature backends sit behind one interface: a
deterministic keyed-MAC mock (default everywhere reproducibility matters)
and Ed25519 (used by the live network runner).  Agent ids are 32-byte
public keys ordered lexicographically; that order is the canonical one
used wherever a tie needs breaking.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

ID_LEN = 32
SEED_LEN = 32
SIG_LEN = 64

Digest = bytes
Signature = bytes


@dataclass(frozen=True, order=True)
class AgentId:
    """32-byte public key; compares and sorts by raw bytes."""

    data: bytes

    def __post_init__(self) -> None:
        if len(self.data) != ID_LEN:
            raise ValueError(f"agent id must be {ID_LEN} bytes, got {len(self.data)}")

    def hex(self) -> str:
        return self.data.hex()

    def __repr__(self) -> str:
        return f"AgentId({self.data[:4].hex()}…)"


@dataclass(frozen=True)
class AgentIdentity:
    """Key pair: public half is the agent id, secret half signs."""

    agent_id: AgentId
    secret: bytes = field(repr=False)
    scheme: str = "mock"


def hash_bytes(data: bytes) -> Digest:
    """SHA-256 of raw bytes."""
    return hashlib.sha256(data).digest()


class SignatureScheme:
    """Interface shared by the mock and Ed25519 backends."""

    name = "abstract"

    def gen_identity(self, seed: bytes) -> AgentIdentity:
        raise NotImplementedError

    def sign(self, digest: Digest, identity: AgentIdentity) -> Signature:
        raise NotImplementedError

    def verify(self, digest: Digest, sig: Signature, agent: AgentId) -> bool:
        raise NotImplementedError


class MockScheme(SignatureScheme):
    """Deterministic stand-in: id-prefixed keyed MAC.

    Not unforgeable (the MAC key derives from the public id); it exists so
    tests get stable signature bytes across runs and machines.
    """

    name = "mock"

    def gen_identity(self, seed: bytes) -> AgentIdentity:
        if len(seed) != SEED_LEN:
            raise ValueError(f"seed must be {SEED_LEN} bytes")
        pub = hash_bytes(b"gdiss-mock-id" + seed)
        return AgentIdentity(agent_id=AgentId(pub), secret=seed, scheme=self.name)

    @staticmethod
    def _mac(digest: Digest, agent: AgentId) -> bytes:
        key = hash_bytes(b"gdiss-mock-sign" + agent.data)
        return hmac.new(key, digest, hashlib.sha256).digest()

    def sign(self, digest: Digest, identity: AgentIdentity) -> Signature:
        return identity.agent_id.data + self._mac(digest, identity.agent_id)

    def verify(self, digest: Digest, sig: Signature, agent: AgentId) -> bool:
        if len(sig) != SIG_LEN:
            return False
        if sig[:ID_LEN] != agent.data:
            return False
        return hmac.compare_digest(sig[ID_LEN:], self._mac(digest, agent))


class Ed25519Scheme(SignatureScheme):
    """Real signatures for the network runner."""

    name = "ed25519"

    def gen_identity(self, seed: bytes) -> AgentIdentity:
        if len(seed) != SEED_LEN:
            raise ValueError(f"seed must be {SEED_LEN} bytes")
        key = Ed25519PrivateKey.from_private_bytes(seed)
        pub = key.public_key().public_bytes_raw()
        return AgentIdentity(agent_id=AgentId(pub), secret=seed, scheme=self.name)

    def sign(self, digest: Digest, identity: AgentIdentity) -> Signature:
        key = Ed25519PrivateKey.from_private_bytes(identity.secret)
        return key.sign(digest)

    def verify(self, digest: Digest, sig: Signature, agent: AgentId) -> bool:
        if len(sig) != SIG_LEN:
            return False
        try:
            Ed25519PublicKey.from_public_bytes(agent.data).verify(sig, digest)
            return True
        except (InvalidSignature, ValueError):
            return False


MOCK_SCHEME = MockScheme()
ED25519_SCHEME = Ed25519Scheme()

_SCHEMES = {s.name: s for s in (MOCK_SCHEME, ED25519_SCHEME)}


def scheme_by_name(name: str) -> SignatureScheme:
    try:
        return _SCHEMES[name]
    except KeyError:
        raise ValueError(f"unknown signature scheme {name!r}") from None


def gen_identity(seed: bytes, scheme: SignatureScheme = MOCK_SCHEME) -> AgentIdentity:
    """Derive a key pair deterministically from a 32-byte seed."""
    return scheme.gen_identity(seed)


def seed_from_hex(line: str) -> bytes:
    seed = bytes.fromhex(line.strip())
    if len(seed) != SEED_LEN:
        raise ValueError("identity seed must be 64 hex chars")
    return seed


def load_identity_file(path: str, scheme: SignatureScheme = ED25519_SCHEME) -> AgentIdentity:
    """Read the first seed line of an identity file (64 hex chars per line)."""
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if line:
                return gen_identity(seed_from_hex(line), scheme)
    raise ValueError(f"no seed found in {path}")


def write_identity_file(path: str, seed: bytes) -> None:
    if len(seed) != SEED_LEN:
        raise ValueError("identity seed must be 32 bytes")
    with open(path, "w", encoding="ascii") as fh:
        fh.write(seed.hex() + "\n")
