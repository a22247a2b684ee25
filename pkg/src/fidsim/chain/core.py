"""Model-update transactions and the hash-chained block ledger."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..util import canonical_json, sha256_hex

TX_AD = "AD"
TX_AC = "AC"

GENESIS_HASH = "0" * 64


@dataclass
class ModelUpdateTx:
    """A signed parameter update.

    The signature covers (kind, payload hash, round, sample count, author);
    ``acc_gain_total`` is filled in during validation and recorded in the
    block, but is not part of the signed material.
    """

    kind: str
    payload: bytes
    payload_hash: str
    author: str
    round_number: int
    sample_count: int
    signature: bytes
    acc_gain_total: float | None = None

    @property
    def tx_id(self) -> str:
        return sha256_hex(
            f"{self.kind}|{self.payload_hash}|{self.author}|{self.round_number}".encode()
        )

    def signing_bytes(self) -> bytes:
        return canonical_json(
            {
                "kind": self.kind,
                "payload_hash": self.payload_hash,
                "author": self.author,
                "round": self.round_number,
                "samples": self.sample_count,
            }
        ).encode()

    def record(self) -> dict:
        """Digest material / export form; payload travels by hash."""
        return {
            "tx_id": self.tx_id,
            "kind": self.kind,
            "payload_hash": self.payload_hash,
            "author": self.author,
            "round": self.round_number,
            "samples": self.sample_count,
            "acc_gain_total": self.acc_gain_total,
        }


def make_tx(scheme, identity, kind: str, payload: bytes, round_number: int, sample_count: int) -> ModelUpdateTx:
    if kind not in (TX_AD, TX_AC):
        raise ValueError(f"unknown transaction kind {kind!r}")
    tx = ModelUpdateTx(
        kind=kind,
        payload=payload,
        payload_hash=sha256_hex(payload),
        author=identity.node_id,
        round_number=round_number,
        sample_count=sample_count,
        signature=b"",
    )
    tx.signature = scheme.sign(identity, tx.signing_bytes())
    return tx


def verify_tx(scheme, tx: ModelUpdateTx) -> bool:
    if sha256_hex(tx.payload) != tx.payload_hash:
        return False
    return scheme.verify(tx.author, tx.signing_bytes(), tx.signature)


def canonical_tx_order(txs):
    """Blocks carry transactions sorted by (kind, author, tx id)."""
    return sorted(txs, key=lambda t: (t.kind, t.author, t.tx_id))


@dataclass
class Block:
    height: int
    prev_hash: str
    retry: int
    miner: str
    txs: list
    miner_signature: bytes = b""
    endorsements: dict = field(default_factory=dict)  # validator id -> signature

    def digest_material(self) -> dict:
        return {
            "height": self.height,
            "prev_hash": self.prev_hash,
            "retry": self.retry,
            "miner": self.miner,
            "txs": [tx.record() for tx in self.txs],
        }

    @property
    def digest(self) -> str:
        return sha256_hex(canonical_json(self.digest_material()).encode())

    def export_record(self) -> dict:
        record = self.digest_material()
        record["digest"] = self.digest
        record["miner_signature"] = self.miner_signature.hex()
        record["endorsements"] = {
            node: sig.hex() for node, sig in sorted(self.endorsements.items())
        }
        return record


def quorum_size(n_validators: int) -> int:
    """Signatures required for finality: ceil(2n/3), the miner's included."""
    return -(-2 * n_validators // 3)


def make_candidate(scheme, miner_identity, height, prev_hash, retry, txs) -> Block:
    block = Block(
        height=height,
        prev_hash=prev_hash,
        retry=retry,
        miner=miner_identity.node_id,
        txs=canonical_tx_order(txs),
    )
    block.miner_signature = scheme.sign(miner_identity, block.digest.encode())
    block.endorsements = {miner_identity.node_id: block.miner_signature}
    return block


def verify_block(scheme, block: Block, n_validators: int, validator_ids=None) -> bool:
    """Check miner + endorsement signatures over the digest and the quorum."""
    digest = block.digest.encode()
    if not scheme.verify(block.miner, digest, block.miner_signature):
        return False
    valid = set()
    for node, sig in block.endorsements.items():
        if validator_ids is not None and node not in validator_ids:
            return False
        if not scheme.verify(node, digest, sig):
            return False
        valid.add(node)
    return len(valid) >= quorum_size(n_validators)


class Blockchain:
    """Append-only hash chain; every append revalidates the link."""

    def __init__(self):
        self.blocks: list = []

    @property
    def tip_hash(self) -> str:
        return self.blocks[-1].digest if self.blocks else GENESIS_HASH

    @property
    def height(self) -> int:
        return len(self.blocks)

    def append(self, block: Block) -> None:
        if block.height != self.height:
            raise ValueError(f"expected height {self.height}, got {block.height}")
        if block.prev_hash != self.tip_hash:
            raise ValueError("block does not extend the current tip")
        self.blocks.append(block)

    def verify_integrity(self, scheme=None, n_validators: int | None = None) -> bool:
        prev = GENESIS_HASH
        for i, block in enumerate(self.blocks):
            if block.height != i or block.prev_hash != prev:
                return False
            for tx in block.txs:
                if sha256_hex(tx.payload) != tx.payload_hash:
                    return False
            if scheme is not None and not verify_block(
                scheme, block, n_validators if n_validators is not None else len(block.endorsements)
            ):
                return False
            prev = block.digest
        return True

    def export_jsonl(self) -> str:
        """One block per line, digests hex-encoded."""
        return "\n".join(
            json.dumps(b.export_record(), sort_keys=True, separators=(",", ":"))
            for b in self.blocks
        ) + ("\n" if self.blocks else "")

    def write_jsonl(self, path) -> None:
        Path(path).write_text(self.export_jsonl())


@dataclass
class ReputationLedger:
    """Per-node accuracy-gain history with a consecutive-negative exclusion rule."""

    window: int = 2
    history: dict = field(default_factory=dict)
    consecutive_negative: dict = field(default_factory=dict)
    excluded: set = field(default_factory=set)

    def update(self, node_id: str, round_gain: float) -> bool:
        """Record one round's gain; returns True when the node becomes excluded.

        A gain of exactly 0 counts as non-negative and resets the streak.
        """
        self.history.setdefault(node_id, []).append(float(round_gain))
        if round_gain < 0:
            streak = self.consecutive_negative.get(node_id, 0) + 1
        else:
            streak = 0
        self.consecutive_negative[node_id] = streak
        if streak >= self.window and node_id not in self.excluded:
            self.excluded.add(node_id)
            return True
        return False

    def is_excluded(self, node_id: str) -> bool:
        return node_id in self.excluded

    def export(self) -> dict:
        return {
            "window": self.window,
            "history": {k: v for k, v in sorted(self.history.items())},
            "consecutive_negative": dict(sorted(self.consecutive_negative.items())),
            "excluded": sorted(self.excluded),
        }
