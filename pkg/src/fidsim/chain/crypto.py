"""Node identities and signing.

A node's identifier is its public key (hex). The default scheme is Ed25519;
a keyed-hash scheme is available as a fast non-cryptographic stand-in for
large property-test runs. Both satisfy the same interface: a signature made
by a node verifies against its id and fails on any message or key change.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from ..util import derive_seed

CAV_PASSIVE = "cav"
MEC_ACTIVE = "mec"

ED25519 = "ed25519"
HASH_SIM = "hash-sim"


@dataclass(frozen=True)
class NodeIdentity:
    node_id: str  # hex public key; doubles as the node's identifier
    private_bytes: bytes
    kind: str
    scheme: str

    def __post_init__(self):
        if self.kind not in (CAV_PASSIVE, MEC_ACTIVE):
            raise ValueError(f"unknown node kind {self.kind!r}")


class Ed25519Scheme:
    """Real signatures via Ed25519; deterministic keys from a seed."""

    name = ED25519

    def generate(self, seed: int, kind: str) -> NodeIdentity:
        seed_bytes = hashlib.sha256(f"ed25519-key:{seed}".encode()).digest()
        private = Ed25519PrivateKey.from_private_bytes(seed_bytes)
        public = private.public_key().public_bytes_raw()
        return NodeIdentity(public.hex(), seed_bytes, kind, self.name)

    def sign(self, identity: NodeIdentity, message: bytes) -> bytes:
        private = Ed25519PrivateKey.from_private_bytes(identity.private_bytes)
        return private.sign(message)

    def verify(self, node_id: str, message: bytes, signature: bytes) -> bool:
        try:
            public = Ed25519PublicKey.from_public_bytes(bytes.fromhex(node_id))
            public.verify(signature, message)
            return True
        except (InvalidSignature, ValueError):
            return False


class HashSimScheme:
    """Keyed-hash simulation mode: NOT cryptographically secure.

    sig = sha256(pub || message). Anyone holding the public id could forge,
    which is fine for simulated honest/faulty behaviors but never for real
    deployments.
    """

    name = HASH_SIM

    def generate(self, seed: int, kind: str) -> NodeIdentity:
        private = hashlib.sha256(f"sim-key:{seed}".encode()).digest()
        public = hashlib.sha256(b"pub:" + private).hexdigest()
        return NodeIdentity(public, private, kind, self.name)

    def sign(self, identity: NodeIdentity, message: bytes) -> bytes:
        return hashlib.sha256(identity.node_id.encode() + b":" + message).digest()

    def verify(self, node_id: str, message: bytes, signature: bytes) -> bool:
        return hashlib.sha256(node_id.encode() + b":" + message).digest() == signature


_SCHEMES = {ED25519: Ed25519Scheme, HASH_SIM: HashSimScheme}


def get_scheme(name: str):
    try:
        return _SCHEMES[name]()
    except KeyError:
        raise ValueError(f"unknown signature scheme {name!r}") from None


def make_identities(scheme, base_seed: int, count: int, kind: str, label: str):
    """Deterministic batch of identities, sorted by node id."""
    idents = [
        scheme.generate(derive_seed(base_seed, "identity", label, i), kind)
        for i in range(count)
    ]
    return sorted(idents, key=lambda n: n.node_id)
