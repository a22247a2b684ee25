"""Open-set attack classifier: one Gaussian descriptor per known class in a
shared learned latent space.

Every class k owns a mean vector, a spread, and a bias; the distance of a
sample to class k is

    D_k(x) = ||f(x) - mu_k||^2 / (2 sigma_k^2) + d * log(sigma_k)

with f the backbone network and d the latent width. Training jointly fits the
backbone and the per-class parameters by minibatch SGD on

    mean_i [ D_{y_i}(x_i) - (1/nu) * log softmax(-D(x_i) + b)_{y_i} ]

Spreads are kept positive through a softplus reparameterization. Confidence is
the negated distance to the closest class; anything less confident than the
least confident training sample is rejected as an unseen (0-day) class.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.special import expit, logsumexp

from . import nn
from .errors import DimensionError, LabelError, NotReadyError
from .flows import BENIGN, to_matrix

DEFAULT_HIDDEN = (32, 16)
DEFAULT_LATENT = 8
DEFAULT_NU = 1.0


def backbone_arch(dim: int, n_classes: int, hidden=DEFAULT_HIDDEN, latent: int = DEFAULT_LATENT) -> nn.Architecture:
    """ReLU hidden layers, identity embedding layer, per-class head block."""
    sizes = (dim, *hidden, latent)
    acts = tuple(nn.RELU for _ in hidden) + (nn.IDENTITY,)
    return nn.Architecture(sizes, acts, head_classes=n_classes)


@dataclass
class MCDDModel:
    """Backbone + per-class descriptors + open-set threshold state.

    ``class_ids[k]`` maps internal index k back to the dataset's class id.
    ``conf_threshold`` is None until computed over the training set.
    """

    params: nn.ParamVector
    class_ids: tuple
    nu: float = DEFAULT_NU
    conf_threshold: float | None = None

    def __post_init__(self):
        if self.nu <= 0:
            raise ValueError("nu must be > 0")
        if len(self.class_ids) != self.params.arch.head_classes:
            raise DimensionError("class id list does not match the head block")

    @property
    def n_classes(self) -> int:
        return self.params.arch.head_classes

    @property
    def latent_dim(self) -> int:
        return self.params.arch.latent_dim

    def head(self):
        means, raw, bias = nn.head_views(self.params)
        return means, nn.softplus(raw), bias

    def with_threshold(self, value: float) -> "MCDDModel":
        return replace(self, conf_threshold=float(value))


@dataclass(frozen=True)
class ClassificationResult:
    flow_index: int
    distances: np.ndarray
    confidence: float
    predicted_class: int | None  # None marks a 0-day / unseen attack

    @property
    def is_zero_day(self) -> bool:
        return self.predicted_class is None


def _embed(params: nn.ParamVector, x: np.ndarray) -> np.ndarray:
    return nn.forward_output(params, np.atleast_2d(np.asarray(x, dtype=np.float64)))


def distance_matrix(params: nn.ParamVector, x: np.ndarray) -> np.ndarray:
    """(N, K) distances D_k for every row of x."""
    means, raw, _bias = nn.head_views(params)
    sigmas = nn.softplus(raw)
    z = _embed(params, x)
    diff = z[:, None, :] - means[None, :, :]
    sq = np.sum(diff * diff, axis=2)
    d = means.shape[1]
    return sq / (2.0 * sigmas**2) + d * np.log(sigmas)


def mcdd_distances(model: MCDDModel, x: np.ndarray) -> np.ndarray:
    return distance_matrix(model.params, x)


def mcdd_distance(model: MCDDModel, x, k: int) -> float:
    if not 0 <= k < model.n_classes:
        raise IndexError(f"class index {k} out of range")
    return float(distance_matrix(model.params, np.asarray(x))[0, k])


def mcdd_loss(model_or_params, x: np.ndarray, y: np.ndarray, nu: float | None = None) -> float:
    """Objective value on a labeled batch; labels are internal indices in [0, K)."""
    params = model_or_params.params if isinstance(model_or_params, MCDDModel) else model_or_params
    if nu is None:
        nu = model_or_params.nu if isinstance(model_or_params, MCDDModel) else DEFAULT_NU
    y = np.asarray(y, dtype=np.int64)
    k = params.arch.head_classes
    if y.size == 0:
        raise LabelError("empty batch")
    if y.min() < 0 or y.max() >= k:
        raise LabelError(f"label out of range [0, {k})")
    dist = distance_matrix(params, x)
    _means, _raw, bias = nn.head_views(params)
    scores = -dist + bias
    log_posterior = scores[np.arange(y.size), y] - logsumexp(scores, axis=1)
    own = dist[np.arange(y.size), y]
    return float(np.mean(own - log_posterior / nu))


def mcdd_loss_grad(params: nn.ParamVector, x: np.ndarray, y: np.ndarray, nu: float):
    """(loss, flat gradient) for one batch; backbone and head jointly."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    n = y.size
    means, raw, bias = nn.head_views(params)
    sigmas = nn.softplus(raw)
    d = means.shape[1]

    acts = nn.forward(params, x)
    z = acts[-1]
    diff = z[:, None, :] - means[None, :, :]  # (N, K, d)
    sq = np.sum(diff * diff, axis=2)  # (N, K)
    dist = sq / (2.0 * sigmas**2) + d * np.log(sigmas)

    scores = -dist + bias
    log_norm = logsumexp(scores, axis=1)
    posterior = np.exp(scores - log_norm[:, None])  # softmax rows
    onehot = np.zeros_like(posterior)
    onehot[np.arange(n), y] = 1.0

    own = dist[np.arange(n), y]
    loss = float(np.mean(own - (scores[np.arange(n), y] - log_norm) / nu))

    # d loss / d D_k and d loss / d b_k (already averaged over the batch)
    ddist = (onehot + (onehot - posterior) / nu) / n
    dbias = -np.sum(onehot - posterior, axis=0) / (nu * n)

    # distance partials
    dz = np.einsum("nk,nkd->nd", ddist / sigmas**2, diff)
    dmeans = -np.einsum("nk,nkd->kd", ddist / sigmas**2, diff)
    dsigma = np.sum(ddist * (-sq / sigmas**3 + d / sigmas), axis=0)
    draw = dsigma * expit(raw)  # softplus' = logistic

    grad = nn.backprop(params, acts, dz)
    start = params.arch.net_param_count
    kk = params.arch.head_classes
    grad[start : start + kk * d] = dmeans.reshape(-1)
    grad[start + kk * d : start + kk * d + kk] = draw
    grad[start + kk * d + kk :] = dbias
    return loss, grad


DEFAULT_GRAD_CLIP = 1.0


def sgd_train_mcdd(params: nn.ParamVector, data, cfg: nn.TrainConfig, nu: float = DEFAULT_NU):
    """Minibatch SGD over (x, y) with internal-index labels.

    Unless the config sets its own per-step clip, gradients are clipped to
    norm 1: the spread parameters make the objective stiff once classes
    tighten, and uncapped SGD steps overshoot and destabilize them.
    """
    x, y = data
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    if cfg.grad_clip is None:
        cfg = nn.TrainConfig(cfg.epochs, cfg.batch_size, cfg.learning_rate, cfg.seed, DEFAULT_GRAD_CLIP)

    def batch_grad(p, idx):
        return mcdd_loss_grad(p, x[idx], y[idx], nu)

    return nn.minibatch_sgd(params, x.shape[0], cfg, batch_grad)


def _attack_matrix(flows_or_xy):
    if isinstance(flows_or_xy, tuple):
        x, y = flows_or_xy
        return np.atleast_2d(np.asarray(x, dtype=np.float64)), np.asarray(y, dtype=np.int64)
    x, y = to_matrix(list(flows_or_xy))
    if np.any(y == BENIGN):
        raise LabelError("classifier training data must contain only attack flows")
    return x, y


def init_mcdd_params(
    arch: nn.Architecture, x: np.ndarray, y_idx: np.ndarray, seed: int
) -> nn.ParamVector:
    """Seeded backbone; class means start at the latent class means, spreads at 1."""
    return with_data_head(nn.init_params(arch, seed), x, y_idx)


MIN_INIT_SPREAD = 1e-3


def with_data_head(params: nn.ParamVector, x: np.ndarray, y_idx: np.ndarray) -> nn.ParamVector:
    """Copy of ``params`` whose class descriptors are fitted to (x, y) latents.

    Means become the per-class latent means; spreads become the per-class
    residual scale sqrt(mean ||z - mu_k||^2 / d). Classes absent from the
    batch keep their current descriptor. Starting spreads at the data scale
    (rather than a fixed 1.0) keeps the distance geometry conditioned from the
    first step; a unit spread dwarfs the latent separation of a freshly
    initialized backbone and stalls training. Used by centralized training and
    by federated workers on their first round, when the shared global model
    still carries the neutral head.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y_idx = np.asarray(y_idx, dtype=np.int64)
    z = _embed(params, x)
    values = params.values.copy()
    start = params.arch.net_param_count
    d = params.arch.latent_dim
    k_total = params.arch.head_classes
    for k in range(k_total):
        rows = z[y_idx == k]
        if rows.shape[0]:
            mu = rows.mean(axis=0)
            values[start + k * d : start + (k + 1) * d] = mu
            residual = float(np.mean(np.sum((rows - mu) ** 2, axis=1))) / d
            spread = max(np.sqrt(residual), MIN_INIT_SPREAD)
            values[start + k_total * d + k] = nn.softplus_inv(spread)
    return params.with_values(values, bump_version=False)


def train_classifier(
    attack_train,
    cfg: nn.TrainConfig,
    nu: float = DEFAULT_NU,
    hidden=DEFAULT_HIDDEN,
    latent: int = DEFAULT_LATENT,
):
    """Fit the open-set classifier on labeled attack flows.

    Returns (MCDDModel, loss history). Class ids are remapped to internal
    indices by sorted order; the model keeps the mapping.
    """
    x, y = _attack_matrix(attack_train)
    class_ids = tuple(int(c) for c in np.unique(y))
    index_of = {c: i for i, c in enumerate(class_ids)}
    y_idx = np.array([index_of[int(c)] for c in y], dtype=np.int64)

    arch = backbone_arch(x.shape[1], len(class_ids), hidden, latent)
    params = init_mcdd_params(arch, x, y_idx, cfg.seed)
    params, history = sgd_train_mcdd(params, (x, y_idx), cfg, nu)
    return MCDDModel(params=params, class_ids=class_ids, nu=nu), history


def confidence_scores(model: MCDDModel, x: np.ndarray) -> np.ndarray:
    """Confidence = negated distance to the closest class (higher = more familiar)."""
    return -np.min(mcdd_distances(model, x), axis=1)


def confidence_and_threshold(model: MCDDModel, attack_train) -> float:
    """Open-set threshold: the minimum confidence over the training set."""
    x, _ = _attack_matrix(attack_train)
    if x.shape[0] == 0:
        raise NotReadyError("cannot compute a confidence threshold on an empty set")
    return float(np.min(confidence_scores(model, x)))


def closed_set_predictions(model: MCDDModel, x: np.ndarray) -> np.ndarray:
    """argmax_k(-D_k + b_k) mapped back to dataset class ids; ties pick the lowest index."""
    dist = mcdd_distances(model, x)
    _means, _sigmas, bias = model.head()
    idx = np.argmax(-dist + bias, axis=1)
    return np.array([model.class_ids[i] for i in idx], dtype=np.int64)


def classify(model: MCDDModel, x: np.ndarray) -> list:
    """Open-set decision per row: a known class id or a 0-day rejection."""
    if model.conf_threshold is None:
        raise NotReadyError("confidence threshold is not set; run confidence_and_threshold")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    dist = mcdd_distances(model, x)
    _means, _sigmas, bias = model.head()
    confidences = -np.min(dist, axis=1)
    winners = np.argmax(-dist + bias, axis=1)
    results = []
    for i in range(x.shape[0]):
        if confidences[i] < model.conf_threshold:
            predicted = None
        else:
            predicted = int(model.class_ids[winners[i]])
        results.append(
            ClassificationResult(i, dist[i].copy(), float(confidences[i]), predicted)
        )
    return results


# --- model file and result export ----------------------------------------------

_MODEL_FORMAT = 1


def save_classifier(path, model: MCDDModel, class_names: dict | None = None) -> None:
    payload = {
        "format": _MODEL_FORMAT,
        "kind": "classifier",
        "nu": model.nu,
        "conf_threshold": model.conf_threshold,
        "class_ids": list(model.class_ids),
        "class_names": {str(k): v for k, v in (class_names or {}).items()},
        "params_hex": nn.params_to_bytes(model.params).hex(),
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1))


def load_classifier(path) -> MCDDModel:
    payload = json.loads(Path(path).read_text())
    if payload.get("kind") != "classifier" or payload.get("format") != _MODEL_FORMAT:
        raise ValueError(f"{path}: not a classifier model file")
    return MCDDModel(
        params=nn.params_from_bytes(bytes.fromhex(payload["params_hex"])),
        class_ids=tuple(payload["class_ids"]),
        nu=payload["nu"],
        conf_threshold=payload["conf_threshold"],
    )


def results_to_csv(path, results, class_ids) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["flow_index", "confidence", "prediction"]
            + [f"distance_class{c}" for c in class_ids]
        )
        for r in results:
            label = "zero_day" if r.is_zero_day else str(r.predicted_class)
            writer.writerow([r.flow_index, repr(r.confidence), label] + [repr(v) for v in r.distances])
