"""Dense feed-forward network engine: forward pass, manual backprop, minibatch SGD.

All trainable state lives in one flat float64 vector (:class:`ParamVector`) so a
model can be averaged, clipped, hashed, serialized, and shipped as a single
unit. An optional per-class head block (mean vector, spread, bias per class)
rides at the tail of the same flat vector for the open-set classifier; plain
networks use ``head_classes=0`` and carry only layer weights and biases.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import DimensionError, NonFiniteGradientError
from .util import rng_from, sha256_hex

IDENTITY = "identity"
SIGMOID = "sigmoid"
RELU = "relu"
TANH = "tanh"

_ACT_CODES = {IDENTITY: 0, SIGMOID: 1, RELU: 2, TANH: 3}
_ACT_NAMES = {code: name for name, code in _ACT_CODES.items()}


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == IDENTITY:
        return z
    if name == SIGMOID:
        return expit(z)
    if name == RELU:
        return np.maximum(z, 0.0)
    if name == TANH:
        return np.tanh(z)
    raise ValueError(f"unknown activation {name!r}")


def _activation_grad(name: str, a: np.ndarray) -> np.ndarray:
    # Derivative expressed through the activation value, which every
    # supported function admits; relu uses the a>0 subgradient at 0.
    if name == IDENTITY:
        return np.ones_like(a)
    if name == SIGMOID:
        return a * (1.0 - a)
    if name == RELU:
        return (a > 0.0).astype(a.dtype)
    if name == TANH:
        return 1.0 - a * a
    raise ValueError(f"unknown activation {name!r}")


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    """Inverse of softplus for y > 0."""
    y = np.asarray(y, dtype=np.float64)
    return y + np.log1p(-np.exp(-y))


@dataclass(frozen=True)
class Architecture:
    """Layer sizes plus one activation per non-input layer.

    ``head_classes > 0`` appends a per-class block of ``latent_dim + 2``
    values (mean vector, raw spread, bias) to the flat parameter vector.
    """

    layer_sizes: tuple
    activations: tuple
    head_classes: int = 0

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        acts = tuple(str(a) for a in self.activations)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "activations", acts)
        if len(sizes) < 2:
            raise DimensionError("architecture needs at least input and output layers")
        if any(s <= 0 for s in sizes):
            raise DimensionError(f"layer sizes must be positive, got {sizes}")
        if len(acts) != len(sizes) - 1:
            raise DimensionError(
                f"need {len(sizes) - 1} activations for {len(sizes)} layers, got {len(acts)}"
            )
        for a in acts:
            if a not in _ACT_CODES:
                raise ValueError(f"unknown activation {a!r}")
        if self.head_classes < 0:
            raise ValueError("head_classes must be >= 0")

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def latent_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def net_param_count(self) -> int:
        return sum(
            i * o + o for i, o in zip(self.layer_sizes[:-1], self.layer_sizes[1:])
        )

    @property
    def head_param_count(self) -> int:
        return self.head_classes * (self.latent_dim + 2)

    @property
    def param_count(self) -> int:
        return self.net_param_count + self.head_param_count


@lru_cache(maxsize=None)
def _layer_offsets(arch: Architecture):
    """(w_start, b_start, end) per layer into the flat vector."""
    offsets = []
    pos = 0
    for fan_in, fan_out in zip(arch.layer_sizes[:-1], arch.layer_sizes[1:]):
        w_start = pos
        b_start = pos + fan_in * fan_out
        pos = b_start + fan_out
        offsets.append((w_start, b_start, pos))
    return tuple(offsets)


@dataclass(frozen=True)
class ParamVector:
    """Flat float64 parameter vector bound to an architecture descriptor."""

    arch: Architecture
    values: np.ndarray
    version: int = 0

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64).reshape(-1)
        if v.size != self.arch.param_count:
            raise DimensionError(
                f"expected {self.arch.param_count} values for {self.arch.layer_sizes}, got {v.size}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("parameter vector contains non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def with_values(self, values: np.ndarray, bump_version: bool = True) -> "ParamVector":
        return ParamVector(self.arch, values, self.version + (1 if bump_version else 0))

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


def layer_views(params: ParamVector):
    """Read-only (W, b) per layer; W has shape (fan_in, fan_out)."""
    out = []
    sizes = params.arch.layer_sizes
    for idx, (w_start, b_start, end) in enumerate(_layer_offsets(params.arch)):
        fan_in, fan_out = sizes[idx], sizes[idx + 1]
        w = params.values[w_start:b_start].reshape(fan_in, fan_out)
        b = params.values[b_start:end]
        out.append((w, b))
    return out


def head_views(params: ParamVector):
    """Read-only (means, raw_spreads, biases) of the per-class head, or None."""
    k = params.arch.head_classes
    if k == 0:
        return None
    d = params.arch.latent_dim
    start = params.arch.net_param_count
    means = params.values[start : start + k * d].reshape(k, d)
    raw = params.values[start + k * d : start + k * d + k]
    bias = params.values[start + k * d + k :]
    return means, raw, bias


def pack_params(
    arch: Architecture,
    layers: Sequence,
    head=None,
    version: int = 0,
) -> ParamVector:
    """Assemble a ParamVector from per-layer (W, b) arrays and optional head."""
    parts = []
    for w, b in layers:
        parts.append(np.asarray(w, dtype=np.float64).reshape(-1))
        parts.append(np.asarray(b, dtype=np.float64).reshape(-1))
    if head is not None:
        means, raw, bias = head
        parts.append(np.asarray(means, dtype=np.float64).reshape(-1))
        parts.append(np.asarray(raw, dtype=np.float64).reshape(-1))
        parts.append(np.asarray(bias, dtype=np.float64).reshape(-1))
    return ParamVector(arch, np.concatenate(parts) if parts else np.empty(0), version)


def init_params(arch: Architecture, seed: int) -> ParamVector:
    """Seeded init: weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases 0.

    Head blocks start at mean 0, spread 1 (via softplus), bias 0.
    """
    rng = rng_from(seed, "init", arch.layer_sizes, arch.activations, arch.head_classes)
    layers = []
    for fan_in, fan_out in zip(arch.layer_sizes[:-1], arch.layer_sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        layers.append((w, np.zeros(fan_out)))
    head = None
    if arch.head_classes:
        k, d = arch.head_classes, arch.latent_dim
        head = (np.zeros((k, d)), np.full(k, float(softplus_inv(1.0))), np.zeros(k))
    return pack_params(arch, layers, head)


def forward(params: ParamVector, x: np.ndarray):
    """Per-layer activations, input included; accepts a vector or a batch matrix."""
    a = np.asarray(x, dtype=np.float64)
    single = a.ndim == 1
    if single:
        a = a[None, :]
    if a.shape[1] != params.arch.layer_sizes[0]:
        raise DimensionError(
            f"input width {a.shape[1]} != first layer size {params.arch.layer_sizes[0]}"
        )
    acts = [a]
    for (w, b), name in zip(layer_views(params), params.arch.activations):
        a = _activate(name, acts[-1] @ w + b)
        acts.append(a)
    if single:
        acts = [layer[0] for layer in acts]
    return acts


def forward_output(params: ParamVector, x: np.ndarray) -> np.ndarray:
    return forward(params, x)[-1]


def backprop(params: ParamVector, acts, output_grad: np.ndarray) -> np.ndarray:
    """Gradient of a scalar loss wrt the flat vector, given dLoss/dOutput.

    ``acts`` is the batch activation list from :func:`forward`; ``output_grad``
    must already carry any 1/N averaging. Head entries of the result are 0.
    """
    grad = np.zeros(params.arch.param_count)
    views = layer_views(params)
    offsets = _layer_offsets(params.arch)
    delta = output_grad * _activation_grad(params.arch.activations[-1], acts[-1])
    for idx in range(params.arch.n_layers - 1, -1, -1):
        w, _b = views[idx]
        w_start, b_start, end = offsets[idx]
        grad[w_start:b_start] = (acts[idx].T @ delta).reshape(-1)
        grad[b_start:end] = delta.sum(axis=0)
        if idx > 0:
            delta = (delta @ w.T) * _activation_grad(
                params.arch.activations[idx - 1], acts[idx]
            )
    return grad


class MeanSquaredError:
    """Batch-mean of per-sample mean squared error between output and target."""

    def value(self, outputs: np.ndarray, targets: np.ndarray) -> float:
        return float(np.mean((outputs - targets) ** 2))

    def output_grad(self, outputs: np.ndarray, targets: np.ndarray) -> np.ndarray:
        return 2.0 * (outputs - targets) / outputs.size


def mse_loss(x, y) -> float:
    """Mean of squared componentwise differences."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionError(f"shape mismatch {x.shape} vs {y.shape}")
    return float(np.mean((x - y) ** 2))


def backward(params: ParamVector, batch, loss) -> np.ndarray:
    """Flat gradient of ``loss`` averaged over the batch (X, targets)."""
    x, targets = batch
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if x.shape[0] == 0:
        raise DimensionError("empty batch")
    acts = forward(params, x)
    grad = backprop(params, acts, loss.output_grad(acts[-1], targets))
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradientError(0)
    return grad


def sgd_step(params: ParamVector, grad: np.ndarray, learning_rate: float) -> ParamVector:
    """One descent step w - lr*g; version increments even when lr == 0."""
    grad = np.asarray(grad, dtype=np.float64).reshape(-1)
    if grad.size != params.arch.param_count:
        raise DimensionError(
            f"gradient size {grad.size} != parameter count {params.arch.param_count}"
        )
    return params.with_values(params.values - learning_rate * grad)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    learning_rate: float
    seed: int = 0
    grad_clip: float | None = None  # optional per-step L2 gradient clip

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size <= 0 or self.learning_rate < 0:
            raise ValueError("batch_size and learning_rate must be positive")


def minibatch_sgd(
    params: ParamVector,
    n_samples: int,
    cfg: TrainConfig,
    batch_grad: Callable[[ParamVector, np.ndarray], tuple],
):
    """Seeded epoch/batch loop shared by both model families.

    ``batch_grad(params, row_indices) -> (loss_value, flat_grad)``. The final
    incomplete batch is used, not dropped. Returns (params, per-epoch mean
    training loss).
    """
    rng = rng_from(cfg.seed, "sgd")
    history = []
    batch_index = 0
    for _epoch in range(cfg.epochs):
        order = rng.permutation(n_samples)
        losses = []
        for start in range(0, n_samples, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss_value, grad = batch_grad(params, idx)
            if not np.all(np.isfinite(grad)):
                raise NonFiniteGradientError(batch_index)
            if cfg.grad_clip is not None:
                norm = np.linalg.norm(grad)
                if norm > cfg.grad_clip:
                    grad = grad * (cfg.grad_clip / norm)
            params = sgd_step(params, grad, cfg.learning_rate)
            losses.append(loss_value)
            batch_index += 1
        history.append(float(np.mean(losses)))
    return params, history


# --- serialization -----------------------------------------------------------

_MAGIC = b"FPV1"
_FORMAT = 1


def params_to_bytes(params: ParamVector) -> bytes:
    """Versioned binary layout: header + little-endian float64 values."""
    arch = params.arch
    out = [
        _MAGIC,
        struct.pack("<HQII", _FORMAT, params.version, arch.head_classes, len(arch.layer_sizes)),
        struct.pack(f"<{len(arch.layer_sizes)}I", *arch.layer_sizes),
        bytes(_ACT_CODES[a] for a in arch.activations),
        params.values.astype("<f8").tobytes(),
    ]
    return b"".join(out)


def params_from_bytes(blob: bytes) -> ParamVector:
    if blob[:4] != _MAGIC:
        raise ValueError("bad magic for parameter blob")
    fmt, version, head_classes, n_sizes = struct.unpack_from("<HQII", blob, 4)
    if fmt != _FORMAT:
        raise ValueError(f"unsupported parameter format {fmt}")
    pos = 4 + struct.calcsize("<HQII")
    sizes = struct.unpack_from(f"<{n_sizes}I", blob, pos)
    pos += 4 * n_sizes
    acts = tuple(_ACT_NAMES[c] for c in blob[pos : pos + n_sizes - 1])
    pos += n_sizes - 1
    arch = Architecture(sizes, acts, head_classes)
    values = np.frombuffer(blob, dtype="<f8", offset=pos, count=arch.param_count)
    if len(blob) != pos + 8 * arch.param_count:
        raise ValueError("parameter blob length mismatch")
    return ParamVector(arch, values.astype(np.float64), version)


def params_to_json(params: ParamVector) -> dict:
    """Debug export; lossy only in readability, not in value (repr round-trip)."""
    return {
        "format": _FORMAT,
        "layer_sizes": list(params.arch.layer_sizes),
        "activations": list(params.arch.activations),
        "head_classes": params.arch.head_classes,
        "version": params.version,
        "values": params.values.tolist(),
    }


def params_digest(params: ParamVector) -> str:
    return sha256_hex(params_to_bytes(params))
