"""Accuracy-scored BFT consensus over the simulated message bus.

One height proceeds in synchronized phases driven by deterministic timer
ticks: every validator broadcasts the accuracy gains it computed for the
transaction pool; after the gain deadline each validator fixes per-transaction
totals (the sum of all reported gains); then up to ``max_retries`` proposal
windows follow, each with a different miner (round-robin). A validator
endorses a candidate only when its content (transactions, totals, previous
hash) matches its own view, endorsements are broadcast validator-to-validator,
and any validator that observes ceil(2n/3) signatures on one digest (the
miner's block signature included) finalizes it.

Honest validators endorse at most once per retry and never after finalizing a
height, which keeps two conflicting quorums impossible with at most f faulty
validators out of 3f+1.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from ..util import canonical_json, rng_from
from .core import Block, canonical_tx_order, make_candidate, quorum_size
from .network import MessageBus

HONEST = "honest"
WITHHOLD_ENDORSE = "withhold_endorse"
EQUIVOCATE_SCORE = "equivocate_score"
EQUIVOCATE_BLOCK = "equivocate_block"
SIGN_FLIP = "sign_flip"  # worker-side fault; validators treat it as honest

VALIDATOR_FAULTS = (WITHHOLD_ENDORSE, EQUIVOCATE_SCORE, EQUIVOCATE_BLOCK)


@dataclass(frozen=True)
class ConsensusTiming:
    max_latency: int = 3

    @property
    def gains_deadline(self) -> int:
        return 2 * self.max_latency + 2

    @property
    def retry_window(self) -> int:
        return 3 * self.max_latency + 4

    def retry_start(self, retry: int) -> int:
        return self.gains_deadline + retry * self.retry_window

    def retry_deadline(self, retry: int) -> int:
        return self.retry_start(retry) + self.retry_window


def _content_key(txs, prev_hash: str) -> str:
    return canonical_json({"prev": prev_hash, "txs": [tx.record() for tx in txs]})


class ValidatorProc:
    """Per-validator state machine for a single consensus height."""

    def __init__(
        self,
        identity,
        scheme,
        validator_ids,
        behavior: str,
        pool,
        gain_map: dict,
        height: int,
        prev_hash: str,
        miner_order,
        timing: ConsensusTiming,
        fault_seed: int = 0,
    ):
        self.identity = identity
        self.node_id = identity.node_id
        self.scheme = scheme
        self.validator_ids = list(validator_ids)
        self.behavior = behavior
        self.pool = {tx.tx_id: tx for tx in pool}
        self.gain_map = dict(gain_map)
        self.height = height
        self.prev_hash = prev_hash
        self.miner_order = list(miner_order)
        self.timing = timing
        self.fault_seed = fault_seed

        self.received_gains = {self.node_id: dict(gain_map)}
        self.scored_txs = None
        self.content = None
        self.current_retry = 0
        self.endorsed_retries: set = set()
        self.candidates: dict = {}  # digest -> Block
        self.endorse_sigs: dict = {}  # digest -> {node_id: signature}
        self.finalized: Block | None = None
        self.finalized_retry: int | None = None

    # -- setup ------------------------------------------------------------

    def start(self, bus: MessageBus, max_retries: int) -> None:
        peers = [v for v in self.validator_ids if v != self.node_id]
        if self.behavior == EQUIVOCATE_SCORE:
            for peer in peers:
                bus.send(self.node_id, peer, "gain", {"gains": self._lied_gains(peer)})
        else:
            for peer in peers:
                bus.send(self.node_id, peer, "gain", {"gains": dict(self.gain_map)})
        bus.set_timer(self.node_id, self.timing.gains_deadline, "gains_deadline")
        for retry in range(max_retries):
            if self.miner_order[retry % len(self.miner_order)] == self.node_id:
                bus.set_timer(
                    self.node_id, self.timing.retry_start(retry) + 1, "propose", {"retry": retry}
                )
            bus.set_timer(
                self.node_id, self.timing.retry_deadline(retry), "retry_deadline", {"retry": retry}
            )

    def _lied_gains(self, peer: str) -> dict:
        rng = rng_from(self.fault_seed, "equivocate", self.node_id, peer)
        return {
            tx_id: float(gain + rng.normal(0.0, 1.0))
            for tx_id, gain in sorted(self.gain_map.items())
        }

    # -- message handling ---------------------------------------------------

    def handle(self, msg, bus: MessageBus) -> None:
        if msg.kind == "timer":
            self._handle_timer(msg.body, bus)
        elif msg.kind == "gain":
            self.received_gains.setdefault(msg.src, dict(msg.body["gains"]))
        elif msg.kind == "candidate":
            self._handle_candidate(msg.body["block"], bus)
        elif msg.kind == "endorse":
            self._handle_endorse(msg.src, msg.body, bus)

    def _handle_timer(self, body: dict, bus: MessageBus) -> None:
        kind = body["timer_kind"]
        if kind == "gains_deadline":
            self._fix_totals()
        elif kind == "propose":
            self._propose(body["retry"], bus)
        elif kind == "retry_deadline":
            if self.finalized is None and self.current_retry == body["retry"]:
                self.current_retry = body["retry"] + 1

    def _fix_totals(self) -> None:
        if self.scored_txs is not None:
            return
        totals = {tx_id: 0.0 for tx_id in self.pool}
        for sender in sorted(self.received_gains):
            gains = self.received_gains[sender]
            for tx_id in sorted(totals):
                totals[tx_id] += float(gains.get(tx_id, 0.0))
        self.scored_txs = canonical_tx_order(
            replace(self.pool[tx_id], acc_gain_total=totals[tx_id])
            for tx_id in sorted(self.pool)
        )
        self.content = _content_key(self.scored_txs, self.prev_hash)

    def _propose(self, retry: int, bus: MessageBus) -> None:
        if self.finalized is not None or retry < self.current_retry:
            return
        self._fix_totals()
        block = make_candidate(
            self.scheme, self.identity, self.height, self.prev_hash, retry, self.scored_txs
        )
        self.candidates[block.digest] = block
        self.endorse_sigs.setdefault(block.digest, {})[self.node_id] = block.miner_signature
        peers = [v for v in self.validator_ids if v != self.node_id]
        if self.behavior == EQUIVOCATE_BLOCK:
            fake_txs = [
                replace(tx, acc_gain_total=(tx.acc_gain_total or 0.0) + 1.0)
                for tx in self.scored_txs
            ]
            fake = make_candidate(
                self.scheme, self.identity, self.height, self.prev_hash, retry, fake_txs
            )
            half = len(peers) // 2
            for peer in peers[:half]:
                bus.send(self.node_id, peer, "candidate", {"block": block})
            for peer in peers[half:]:
                bus.send(self.node_id, peer, "candidate", {"block": fake})
        else:
            bus.broadcast(self.node_id, peers, "candidate", {"block": block})
        self._try_finalize(block.digest)

    def _handle_candidate(self, block: Block, bus: MessageBus) -> None:
        if block.height != self.height:
            return
        if not self.scheme.verify(block.miner, block.digest.encode(), block.miner_signature):
            return
        self.candidates.setdefault(block.digest, block)
        self.endorse_sigs.setdefault(block.digest, {})[block.miner] = block.miner_signature
        if self.finalized is None and self.behavior != WITHHOLD_ENDORSE:
            self._fix_totals()
            matches = (
                block.prev_hash == self.prev_hash
                and _content_key(block.txs, block.prev_hash) == self.content
            )
            if matches and block.retry not in self.endorsed_retries:
                self.endorsed_retries.add(block.retry)
                sig = self.scheme.sign(self.identity, block.digest.encode())
                self.endorse_sigs[block.digest][self.node_id] = sig
                peers = [v for v in self.validator_ids if v != self.node_id]
                bus.broadcast(
                    self.node_id,
                    peers,
                    "endorse",
                    {"digest": block.digest, "retry": block.retry, "sig": sig},
                )
        self._try_finalize(block.digest)

    def _handle_endorse(self, sender: str, body: dict, bus: MessageBus) -> None:
        digest = body["digest"]
        if sender not in self.validator_ids:
            return
        if not self.scheme.verify(sender, digest.encode(), body["sig"]):
            return
        self.endorse_sigs.setdefault(digest, {})[sender] = body["sig"]
        self._try_finalize(digest)

    def _try_finalize(self, digest: str) -> None:
        if self.finalized is not None:
            return
        block = self.candidates.get(digest)
        sigs = self.endorse_sigs.get(digest, {})
        if block is None or len(sigs) < quorum_size(len(self.validator_ids)):
            return
        final = Block(
            height=block.height,
            prev_hash=block.prev_hash,
            retry=block.retry,
            miner=block.miner,
            txs=block.txs,
            miner_signature=block.miner_signature,
            endorsements=dict(sorted(sigs.items())),
        )
        self.finalized = final
        self.finalized_retry = block.retry


@dataclass
class HeightResult:
    block: Block | None
    finalized_by: dict
    retries_used: int
    ticks: int
    discarded: bool
    messages: dict = field(default_factory=dict)


def run_consensus_height(
    scheme,
    validators,
    behaviors: dict,
    pool,
    gain_maps: dict,
    height: int,
    prev_hashes,
    bus: MessageBus,
    miner_start: int = 0,
    max_retries: int | None = None,
    timing: ConsensusTiming | None = None,
    fault_seed: int = 0,
) -> HeightResult:
    """Drive one height to finalization or discard over the given bus.

    ``prev_hashes`` may be a single hash (shared view) or a per-validator dict
    for fork-injection experiments. ``gain_maps[node_id]`` holds each
    validator's locally computed per-transaction gains.
    """
    timing = timing or ConsensusTiming()
    ids = sorted(v.node_id for v in validators)
    miner_order = [ids[(miner_start + r) % len(ids)] for r in range(len(ids))]
    if max_retries is None:
        max_retries = len(ids)
    if isinstance(prev_hashes, str):
        prev_hashes = {node_id: prev_hashes for node_id in ids}

    start_messages = {
        kind: bus.sent.get(kind, 0) for kind in ("gain", "candidate", "endorse")
    }
    procs = {}
    for ident in validators:
        proc = ValidatorProc(
            identity=ident,
            scheme=scheme,
            validator_ids=ids,
            behavior=behaviors.get(ident.node_id, HONEST),
            pool=pool,
            gain_map=gain_maps.get(ident.node_id, {}),
            height=height,
            prev_hash=prev_hashes[ident.node_id],
            miner_order=miner_order,
            timing=timing,
            fault_seed=fault_seed,
        )
        procs[ident.node_id] = proc
    for proc in procs.values():
        proc.start(bus, max_retries)
    ticks = bus.run({node_id: proc.handle for node_id, proc in procs.items()})

    finalized_by = {node_id: proc.finalized for node_id, proc in procs.items()}
    block = None
    retries = [
        proc.finalized_retry for proc in procs.values() if proc.finalized_retry is not None
    ]
    for node_id in ids:  # deterministic pick: lowest finalizing validator id
        if finalized_by[node_id] is not None:
            block = finalized_by[node_id]
            break
    messages = {
        kind: bus.sent.get(kind, 0) - start_messages[kind]
        for kind in ("gain", "candidate", "endorse")
    }
    messages["total"] = sum(messages.values())
    return HeightResult(
        block=block,
        finalized_by=finalized_by,
        retries_used=(max(retries) + 1) if retries else max_retries,
        ticks=ticks,
        discarded=block is None,
        messages=messages,
    )
