"""Reconstruction-error anomaly detector with a robust median/MAD threshold.

Trains an auto-encoder on benign flows only; at test time a flow whose
reconstruction MSE strictly exceeds the threshold is judged malicious. The
threshold is median(errors) + C * MAD(errors) over a benign validation set.
The single norm convention everywhere is MSE, so the threshold lives on the
same scale as the training loss.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import nn
from .errors import LabelError, NotReadyError
from .flows import BENIGN, to_matrix
from .util import sha256_hex

DEFAULT_HIDDEN = (32, 16, 8, 16, 32)
DEFAULT_C_MAD = 3.0


def autoencoder_arch(dim: int, hidden=DEFAULT_HIDDEN) -> nn.Architecture:
    """Symmetric sigmoid auto-encoder: dim -> hidden... -> dim."""
    sizes = (dim, *hidden, dim)
    return nn.Architecture(sizes, tuple(nn.SIGMOID for _ in range(len(sizes) - 1)))


@dataclass
class DetectorModel:
    """Trained detector: parameters plus decision threshold state.

    ``alpha`` is None until a validation pass has run; scoring before that is
    an error. ``benign_store`` accumulates flows judged benign at detection
    time for later retraining (append-only; retraining itself is an explicit,
    separate action).
    """

    params: nn.ParamVector
    c_mad: float = DEFAULT_C_MAD
    alpha: float | None = None
    trained_on: str = ""
    benign_store: list = field(default_factory=list)

    def __post_init__(self):
        if self.c_mad <= 0:
            raise ValueError("the MAD multiplier must be > 0")

    def with_threshold(self, alpha: float) -> "DetectorModel":
        return replace(self, alpha=float(alpha))


@dataclass(frozen=True)
class DetectionVerdict:
    flow_index: int
    error: float
    is_malicious: bool


def _benign_matrix(flows_or_matrix, what: str) -> np.ndarray:
    """Accept a flow list or a plain matrix; flows must all be benign."""
    if isinstance(flows_or_matrix, np.ndarray):
        return np.atleast_2d(np.asarray(flows_or_matrix, dtype=np.float64))
    x, y = to_matrix(list(flows_or_matrix))
    bad = y[y != BENIGN]
    if bad.size:
        raise LabelError(
            f"{what} must contain only benign flows; found label {int(bad[0])}"
        )
    return x


def sgd_train_detector(params: nn.ParamVector, x: np.ndarray, cfg: nn.TrainConfig):
    """Minibatch SGD on reconstruction MSE; returns (params, loss history)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    loss = nn.MeanSquaredError()

    def batch_grad(p, idx):
        batch = x[idx]
        acts = nn.forward(p, batch)
        value = loss.value(acts[-1], batch)
        return value, nn.backprop(p, acts, loss.output_grad(acts[-1], batch))

    return nn.minibatch_sgd(params, x.shape[0], cfg, batch_grad)


def train_detector(
    benign_train,
    cfg: nn.TrainConfig,
    hidden=DEFAULT_HIDDEN,
    dataset_tag: str = "",
):
    """Train the auto-encoder on benign flows; returns (params, loss history).

    Raises :class:`LabelError` if any input flow is not benign.
    """
    x = _benign_matrix(benign_train, "detector training data")
    params = nn.init_params(autoencoder_arch(x.shape[1], hidden), cfg.seed)
    return sgd_train_detector(params, x, cfg)


def reconstruction_errors(params: nn.ParamVector, x: np.ndarray) -> np.ndarray:
    """Per-row MSE between input and its reconstruction."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    recon = nn.forward_output(params, x)
    return np.mean((x - recon) ** 2, axis=1)


def reconstruction_error(params: nn.ParamVector, x) -> float:
    return float(reconstruction_errors(params, np.asarray(x))[0])


def median_absolute_deviation(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=np.float64)
    return float(np.median(np.abs(values - np.median(values))))


def threshold_from_errors(errors: np.ndarray, c_mad: float) -> float:
    """median + C * MAD; an even-length median is the mean of the two central values."""
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise NotReadyError("cannot compute a threshold from an empty validation set")
    return float(np.median(errors) + c_mad * median_absolute_deviation(errors))


def compute_threshold(params: nn.ParamVector, benign_val, c_mad: float = DEFAULT_C_MAD) -> float:
    """Threshold over a benign validation set; deterministic and order-free."""
    x = _benign_matrix(benign_val, "threshold validation data")
    if x.shape[0] == 0:
        raise NotReadyError("cannot compute a threshold from an empty validation set")
    return threshold_from_errors(reconstruction_errors(params, x), c_mad)


def detect(model: DetectorModel, x: np.ndarray, store_benign: bool = False) -> list:
    """Score feature rows; strictly-above-threshold flows are malicious.

    Takes features only — labels are deliberately not part of this interface.
    A flow whose error equals the threshold exactly is benign.
    """
    if model.alpha is None:
        raise NotReadyError("detector threshold is not set; run compute_threshold first")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    errors = reconstruction_errors(model.params, x)
    verdicts = []
    for i, err in enumerate(errors):
        malicious = bool(err > model.alpha)
        verdicts.append(DetectionVerdict(i, float(err), malicious))
        if store_benign and not malicious:
            model.benign_store.append(x[i])
    return verdicts


def detection_accuracy(params: nn.ParamVector, x: np.ndarray, alpha: float) -> float:
    """Fraction of rows judged benign at a fixed threshold (benign-only reference sets)."""
    errors = reconstruction_errors(params, x)
    return float(np.mean(errors <= alpha))


def recon_loss(params: nn.ParamVector, x: np.ndarray) -> float:
    """Mean reconstruction MSE of a whole set; the validation loss for updates."""
    return float(np.mean(reconstruction_errors(params, x)))


# --- model file and verdict export --------------------------------------------

_MODEL_FORMAT = 1


def save_detector(path, model: DetectorModel, schema_hash: str = "") -> None:
    payload = {
        "format": _MODEL_FORMAT,
        "kind": "detector",
        "c_mad": model.c_mad,
        "alpha": model.alpha,
        "trained_on": model.trained_on,
        "schema_hash": schema_hash,
        "params_hex": nn.params_to_bytes(model.params).hex(),
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1))


def load_detector(path) -> DetectorModel:
    payload = json.loads(Path(path).read_text())
    if payload.get("kind") != "detector" or payload.get("format") != _MODEL_FORMAT:
        raise ValueError(f"{path}: not a detector model file")
    return DetectorModel(
        params=nn.params_from_bytes(bytes.fromhex(payload["params_hex"])),
        c_mad=payload["c_mad"],
        alpha=payload["alpha"],
        trained_on=payload.get("trained_on", ""),
    )


def verdicts_to_csv(path, verdicts) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["flow_index", "reconstruction_error", "verdict"])
        for v in verdicts:
            writer.writerow([v.flow_index, repr(v.error), "malicious" if v.is_malicious else "benign"])


def schema_fingerprint(feature_names) -> str:
    return sha256_hex(",".join(feature_names).encode())
