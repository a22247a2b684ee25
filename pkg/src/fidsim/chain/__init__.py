"""Consortium-chain subsystem: identities, transactions, the message bus,
accuracy-scored consensus, and the end-to-end training simulation."""

from .consensus import (
    EQUIVOCATE_BLOCK,
    EQUIVOCATE_SCORE,
    HONEST,
    SIGN_FLIP,
    WITHHOLD_ENDORSE,
    ConsensusTiming,
    HeightResult,
    run_consensus_height,
)
from .core import (
    Block,
    Blockchain,
    GENESIS_HASH,
    ModelUpdateTx,
    ReputationLedger,
    TX_AC,
    TX_AD,
    canonical_tx_order,
    make_candidate,
    make_tx,
    quorum_size,
    verify_block,
    verify_tx,
)
from .crypto import CAV_PASSIVE, ED25519, HASH_SIM, MEC_ACTIVE, NodeIdentity, get_scheme, make_identities
from .network import FaultPlan, MessageBus, constant_latency, uniform_latency
from .simulation import ChainSimConfig, FLConfigs, SimulationData, SimulationResult, run_training
