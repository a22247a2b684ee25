"""End-to-end federated training rounds coordinated by the consensus chain.

Each round: passive vehicle nodes train the detector locally (with optional
differential privacy) and push updates off-chain to their adjacent edge
worker; workers validate and aggregate those updates, train the classifier on
their local attack data, and submit both as signed transactions; validators
score every transaction by accuracy gain against the previous global model;
the scored pool is packaged into a block under the 2/3-quorum consensus; the
finalized block refreshes the global models, feeds the reputation ledger, and
rotates the roles for the next round. Training stops when the mean accuracy
gain recorded in the latest block approaches zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .. import classifier as ac_mod
from .. import detector as ad_mod
from .. import nn
from ..errors import TopologyError
from ..fed import ClientWeight, LocalUpdateConfig, ValidationPolicy, fedavg, local_update, validate_update
from ..util import derive_seed, rng_from
from . import consensus as cons
from .core import (
    Block,
    Blockchain,
    ModelUpdateTx,
    ReputationLedger,
    TX_AC,
    TX_AD,
    make_tx,
    verify_tx,
)
from .crypto import CAV_PASSIVE, MEC_ACTIVE, get_scheme, make_identities
from .network import FaultPlan, MessageBus, uniform_latency


@dataclass(frozen=True)
class ChainSimConfig:
    n_mec: int = 12
    n_cav: int = 24
    f: int = 1
    exclusion_window: int = 2
    stop_tolerance: float = 1e-3
    max_rounds: int = 10
    signature_scheme: str = "hash-sim"
    latency_low: int = 1
    latency_high: int = 3
    drop_prob: float = 0.0
    duplicate_prob: float = 0.0
    malicious_fraction: float = 0.0
    malicious_behavior: str = cons.SIGN_FLIP
    scoring_enabled: bool = True  # gain filter at refresh + reputation updates
    valup_enabled: bool = True  # loss-gap validation of vehicle updates at workers
    tx_valup_enabled: bool = False  # optional loss-gap check of pool transactions
    exclusion_enabled: bool = True
    c_mad: float = 3.0

    @property
    def n_validators(self) -> int:
        return 3 * self.f + 1


@dataclass(frozen=True)
class FLConfigs:
    ad_local: LocalUpdateConfig
    ac_local: LocalUpdateConfig
    validation: ValidationPolicy
    ad_hidden: tuple = ad_mod.DEFAULT_HIDDEN
    ac_hidden: tuple = ac_mod.DEFAULT_HIDDEN
    ac_latent: int = ac_mod.DEFAULT_LATENT
    nu: float = ac_mod.DEFAULT_NU


@dataclass
class SimulationData:
    """Pre-partitioned client datasets for one simulation run.

    Classifier labels must already be internal indices in [0, K);
    ``ac_class_ids`` maps them back to dataset class ids. An empty class list
    skips the classifier stage entirely.
    """

    cav_benign: list  # per-CAV feature matrices
    mec_attack: list  # per-MEC (features, labels) training shards
    mec_eval: list  # per-MEC (features, labels) scoring shards
    b_test: np.ndarray  # shared benign-only reference set
    ac_class_ids: tuple = ()

    @property
    def feature_dim(self) -> int:
        return self.b_test.shape[1]

    @property
    def ac_enabled(self) -> bool:
        return len(self.ac_class_ids) > 0


@dataclass
class SimulationResult:
    chain: Blockchain
    detector: ad_mod.DetectorModel
    classifier: ac_mod.MCDDModel | None
    reputation: ReputationLedger
    transcripts: list
    counters: dict
    rounds_run: int
    stop_reason: str
    node_ids: dict = field(default_factory=dict)


def _role_bootstrap(mec_ids, n_validators):
    validators = mec_ids[:n_validators]
    return validators, validators[0], mec_ids[n_validators:]


def run_training(data: SimulationData, fl: FLConfigs, sim: ChainSimConfig, seed: int) -> SimulationResult:
    if sim.n_mec < sim.n_validators + 1:
        raise TopologyError(
            f"need at least {sim.n_validators + 1} active nodes for {sim.n_validators}"
            f" validators plus one worker, got {sim.n_mec}"
        )
    if sim.n_cav < 1:
        raise TopologyError("need at least one passive vehicle node")
    if len(data.cav_benign) != sim.n_cav or len(data.mec_attack) != sim.n_mec:
        raise TopologyError("data partitions do not match the topology sizes")

    scheme = get_scheme(sim.signature_scheme)
    mecs = make_identities(scheme, derive_seed(seed, "mec"), sim.n_mec, MEC_ACTIVE, "mec")
    cavs = make_identities(scheme, derive_seed(seed, "cav"), sim.n_cav, CAV_PASSIVE, "cav")
    mec_ids = [m.node_id for m in mecs]
    by_id = {m.node_id: m for m in mecs}
    mec_data = {m.node_id: i for i, m in enumerate(mecs)}

    n_malicious = int(round(sim.malicious_fraction * sim.n_mec))
    malicious = set(
        rng_from(seed, "malicious").choice(mec_ids, size=n_malicious, replace=False)
    ) if n_malicious else set()

    # global models
    ad_arch = ad_mod.autoencoder_arch(data.feature_dim, fl.ad_hidden)
    ad_global = nn.init_params(ad_arch, derive_seed(seed, "ad-init"))
    alpha = ad_mod.compute_threshold(ad_global, data.b_test, sim.c_mad)
    ac_global = None
    ac_bootstrapped = False  # heads start neutral; workers seed them from local data in round 0
    if data.ac_enabled:
        ac_arch = ac_mod.backbone_arch(
            data.feature_dim, len(data.ac_class_ids), fl.ac_hidden, fl.ac_latent
        )
        ac_global = nn.init_params(ac_arch, derive_seed(seed, "ac-init"))

    chain = Blockchain()
    reputation = ReputationLedger(window=sim.exclusion_window)
    validators, miner, workers = _role_bootstrap(mec_ids, sim.n_validators)
    transcripts = []
    counters = {
        "offchain_cav_updates": 0,
        "tx_messages": 0,
        "consensus_messages": 0,
        "consensus_messages_per_block": [],
        "consensus_ticks_per_block": [],
        "retries_per_block": [],
        "txs_per_block": [],
    }
    stop_reason = "max_rounds"
    rounds_run = 0

    for round_no in range(sim.max_rounds):
        rounds_run = round_no + 1
        eligible_workers = [w for w in workers if not reputation.is_excluded(w)]
        round_log: dict = {
            "round": round_no,
            "validators": list(validators),
            "miner": miner,
            "workers": list(eligible_workers),
            "excluded": sorted(reputation.excluded),
            "cav_updates": [],
            "txs": [],
        }

        # --- vehicle-side detector updates, delivered off-chain ---------------
        updates_by_worker: dict = {w: [] for w in eligible_workers}
        if eligible_workers:
            for cav_index, cav in enumerate(cavs):
                shard = data.cav_benign[cav_index]
                if shard.shape[0] == 0:
                    continue
                cfg = replace(fl.ad_local, seed=derive_seed(seed, "ad-local", round_no, cav.node_id))
                upd = local_update(ad_global, shard, cfg, ad_mod.sgd_train_detector)
                worker = eligible_workers[cav_index % len(eligible_workers)]
                updates_by_worker[worker].append((cav.node_id, upd, shard.shape[0]))
                counters["offchain_cav_updates"] += 1

        # --- worker aggregation and transaction creation ----------------------
        pool = []
        for worker in eligible_workers:
            ident = by_id[worker]
            accepted = []
            for cav_id, upd, n_samples in updates_by_worker[worker]:
                ok = True
                if sim.valup_enabled:
                    ok = validate_update(
                        upd, ad_global, fl.validation, ad_mod.recon_loss, data.b_test
                    )
                round_log["cav_updates"].append(
                    {"cav": cav_id, "worker": worker, "accepted": bool(ok)}
                )
                if ok:
                    accepted.append((upd, ClientWeight(cav_id, n_samples)))
            if accepted:
                agg = fedavg(accepted)
                if worker in malicious and sim.malicious_behavior == cons.SIGN_FLIP:
                    agg = agg.with_values(-agg.values)
                pool.append(
                    make_tx(
                        scheme,
                        ident,
                        TX_AD,
                        nn.params_to_bytes(agg),
                        round_no,
                        sum(w.sample_count for _u, w in accepted),
                    )
                )
            if ac_global is not None:
                x_w, y_w = data.mec_attack[mec_data[worker]]
                if x_w.shape[0]:
                    cfg = replace(
                        fl.ac_local, seed=derive_seed(seed, "ac-local", round_no, worker)
                    )
                    start = ac_global
                    if not ac_bootstrapped:
                        start = ac_mod.with_data_head(ac_global, x_w, y_w)
                    upd = local_update(
                        start,
                        (x_w, y_w),
                        cfg,
                        lambda p, d, c: ac_mod.sgd_train_mcdd(p, d, c, fl.nu),
                    )
                    if worker in malicious and sim.malicious_behavior == cons.SIGN_FLIP:
                        upd = upd.with_values(-upd.values)
                    pool.append(
                        make_tx(
                            scheme, ident, TX_AC, nn.params_to_bytes(upd), round_no, x_w.shape[0]
                        )
                    )
        counters["tx_messages"] += len(pool) * len(validators)

        # --- validator scoring --------------------------------------------------
        valid_pool = [tx for tx in pool if verify_tx(scheme, tx)]
        payload_cache = {tx.tx_id: nn.params_from_bytes(tx.payload) for tx in valid_pool}
        if sim.tx_valup_enabled:
            kept = []
            for tx in valid_pool:
                if tx.kind == TX_AD:
                    ok = validate_update(
                        payload_cache[tx.tx_id], ad_global, fl.validation,
                        ad_mod.recon_loss, data.b_test,
                    )
                else:
                    ok = True  # classifier gap checks happen per-validator below
                if ok:
                    kept.append(tx)
            valid_pool = kept

        base_ad_acc = ad_mod.detection_accuracy(ad_global, data.b_test, alpha)
        gain_maps = {}
        for validator in validators:
            ex, ey = data.mec_eval[mec_data[validator]]
            base_ac_acc = None
            if ac_global is not None and ex.shape[0]:
                base_ac_acc = float(
                    np.mean(_closed_set_internal(ac_global, ex) == ey)
                )
            gains = {}
            for tx in valid_pool:
                candidate = payload_cache[tx.tx_id]
                if tx.kind == TX_AD:
                    gains[tx.tx_id] = (
                        ad_mod.detection_accuracy(candidate, data.b_test, alpha) - base_ad_acc
                    )
                elif base_ac_acc is not None:
                    acc = float(np.mean(_closed_set_internal(candidate, ex) == ey))
                    gains[tx.tx_id] = acc - base_ac_acc
                else:
                    gains[tx.tx_id] = 0.0
            gain_maps[validator] = gains

        # --- consensus -----------------------------------------------------------
        behaviors = {
            node: sim.malicious_behavior
            for node in validators
            if node in malicious and sim.malicious_behavior in cons.VALIDATOR_FAULTS
        }
        bus = MessageBus(
            uniform_latency(derive_seed(seed, "latency", round_no), sim.latency_low, sim.latency_high),
            seed=derive_seed(seed, "bus", round_no),
            faults=FaultPlan(sim.drop_prob, sim.duplicate_prob),
        )
        sorted_validators = sorted(validators)
        result = cons.run_consensus_height(
            scheme,
            [by_id[v] for v in validators],
            behaviors,
            valid_pool,
            gain_maps,
            chain.height,
            chain.tip_hash,
            bus,
            miner_start=sorted_validators.index(miner),
            timing=cons.ConsensusTiming(sim.latency_high),
            fault_seed=derive_seed(seed, "faults", round_no),
        )
        counters["consensus_messages"] += result.messages["total"]
        counters["consensus_messages_per_block"].append(result.messages["total"])
        counters["consensus_ticks_per_block"].append(result.ticks)
        counters["retries_per_block"].append(result.retries_used)

        if result.block is None:
            round_log["block"] = None
            transcripts.append(round_log)
            miner = sorted_validators[
                (sorted_validators.index(miner) + result.retries_used) % len(sorted_validators)
            ]
            continue

        block = result.block
        chain.append(block)
        counters["txs_per_block"].append(len(block.txs))
        round_log["block"] = {
            "height": block.height,
            "digest": block.digest,
            "retry": block.retry,
            "miner": block.miner,
        }
        round_log["txs"] = [tx.record() for tx in block.txs]

        # --- refresh global models from the finalized block ----------------------
        def eligible(kind):
            out = []
            for tx in block.txs:
                if tx.kind != kind:
                    continue
                if sim.scoring_enabled and tx.acc_gain_total is not None and tx.acc_gain_total < 0:
                    continue
                out.append((payload_cache[tx.tx_id], ClientWeight(tx.author, tx.sample_count)))
            return out

        ad_updates = eligible(TX_AD)
        if ad_updates:
            ad_global = fedavg(ad_updates)
            alpha = ad_mod.compute_threshold(ad_global, data.b_test, sim.c_mad)
        if ac_global is not None:
            ac_updates = eligible(TX_AC)
            if ac_updates:
                ac_global = fedavg(ac_updates)
                ac_bootstrapped = True

        # --- reputation and exclusion -------------------------------------------
        round_gains: dict = {}
        for tx in block.txs:
            round_gains[tx.author] = round_gains.get(tx.author, 0.0) + float(
                tx.acc_gain_total or 0.0
            )
        if sim.scoring_enabled and sim.exclusion_enabled:
            for author in sorted(round_gains):
                gain = round_gains[author]
                # gains inside the stop tolerance are convergence jitter, not
                # harm; counting them as negative would purge honest nodes
                # once the models plateau
                if abs(gain) < sim.stop_tolerance:
                    gain = 0.0
                if reputation.update(author, gain):
                    round_log.setdefault("newly_excluded", []).append(author)

        transcripts.append(round_log)

        # --- stop policy ---------------------------------------------------------
        block_gains = [float(tx.acc_gain_total or 0.0) for tx in block.txs]
        mean_gain = float(np.mean(block_gains)) if block_gains else 0.0
        round_log["mean_acc_gain"] = mean_gain
        if abs(mean_gain) < sim.stop_tolerance:
            stop_reason = "converged"
            break

        # --- role rotation ---------------------------------------------------------
        eligible_ids = [m for m in mec_ids if not reputation.is_excluded(m)]
        if len(eligible_ids) < sim.n_validators:
            stop_reason = "insufficient_eligible_nodes"
            round_log["halt"] = (
                f"only {len(eligible_ids)} eligible active nodes for"
                f" {sim.n_validators} validator slots"
            )
            break
        ranked_workers = sorted(
            (w for w in eligible_workers if not reputation.is_excluded(w)),
            key=lambda w: (-(round_gains.get(w, -math.inf)), w),
        )
        next_validators = ranked_workers[: sim.n_validators]
        if len(next_validators) < sim.n_validators:
            fillers = [
                v for v in sorted(eligible_ids) if v not in next_validators
            ]
            next_validators += fillers[: sim.n_validators - len(next_validators)]
        validators = next_validators
        miner = validators[0]  # highest-ranked by gain, ties by id
        workers = [m for m in eligible_ids if m not in set(validators)]

    detector = ad_mod.DetectorModel(
        params=ad_global, c_mad=sim.c_mad, alpha=alpha, trained_on="federated"
    )
    final_classifier = None
    if ac_global is not None:
        model = ac_mod.MCDDModel(params=ac_global, class_ids=data.ac_class_ids, nu=fl.nu)
        train_x = np.vstack([x for x, _y in data.mec_attack if x.shape[0]])
        final_classifier = model.with_threshold(
            float(np.min(ac_mod.confidence_scores(model, train_x)))
        )
    return SimulationResult(
        chain=chain,
        detector=detector,
        classifier=final_classifier,
        reputation=reputation,
        transcripts=transcripts,
        counters=counters,
        rounds_run=rounds_run,
        stop_reason=stop_reason,
        node_ids={"mec": mec_ids, "cav": [c.node_id for c in cavs], "malicious": sorted(malicious)},
    )


def _closed_set_internal(params: nn.ParamVector, x: np.ndarray) -> np.ndarray:
    """argmax_k(-D_k + b_k) as internal indices, straight from raw parameters."""
    from ..classifier import distance_matrix

    dist = distance_matrix(params, x)
    bias = nn.head_views(params)[2]
    return np.argmax(-dist + bias, axis=1)
