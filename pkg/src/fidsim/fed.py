"""Federated update mechanics: norm clipping, Gaussian-mechanism noise,
loss-gap validation, and sample-weighted averaging.

The clip applies to the full parameter vector of a finished local update (not
to per-step gradients); a per-step gradient-clipping mode exists behind
``LocalUpdateConfig.grad_clip_mode`` for comparison. ``clip_bound=inf``
disables clipping exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import DimensionError
from .util import derive_seed, rng_from


@dataclass(frozen=True)
class LocalUpdateConfig:
    epochs: int
    batch_size: int
    learning_rate: float
    seed: int = 0
    clip_bound: float = math.inf
    dp_enabled: bool = False
    epsilon: float = 1.0
    delta_dp: float = 1e-5
    grad_clip_mode: bool = False

    def __post_init__(self):
        if self.clip_bound <= 0:
            raise ValueError("clip bound must be > 0")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if not 0.0 < self.delta_dp < 1.0:
            raise ValueError("delta_dp must lie in (0, 1)")

    def train_config(self) -> nn.TrainConfig:
        grad_clip = self.clip_bound if self.grad_clip_mode and math.isfinite(self.clip_bound) else None
        return nn.TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=self.seed,
            grad_clip=grad_clip,
        )


@dataclass(frozen=True)
class ValidationPolicy:
    """Accept an update when its reference-set loss moved by at most ``loss_gap``.

    ``loss_gap=inf`` disables validation.
    """

    loss_gap: float

    def __post_init__(self):
        if self.loss_gap <= 0:
            raise ValueError("loss gap must be > 0")


@dataclass(frozen=True)
class ClientWeight:
    client_id: str
    sample_count: int

    def __post_init__(self):
        if self.sample_count < 1:
            raise ValueError("sample count must be >= 1")


def gaussian_sigma(epsilon: float, delta_dp: float, clip_bound: float) -> float:
    """Gaussian-mechanism calibration: C * sqrt(2 ln(1.25/delta)) / epsilon."""
    return clip_bound * math.sqrt(2.0 * math.log(1.25 / delta_dp)) / epsilon


def clip_update(params: nn.ParamVector, clip_bound: float) -> nn.ParamVector:
    """Scale the vector by 1/max(1, ||w||/C); afterwards ||w|| <= C.

    When the norm is already within bound (including C = inf) the values are
    returned untouched, so disabling the clip never perturbs a single bit.
    """
    if clip_bound <= 0:
        raise ValueError("clip bound must be > 0")
    norm = params.norm
    if not math.isfinite(clip_bound) or norm <= clip_bound:
        return params
    return params.with_values(params.values * (clip_bound / norm))


def add_dp_noise(
    params: nn.ParamVector,
    epsilon: float,
    delta_dp: float,
    clip_bound: float,
    seed: int,
) -> nn.ParamVector:
    """Add i.i.d. seeded Gaussian noise calibrated by the mechanism formula."""
    sigma = gaussian_sigma(epsilon, delta_dp, clip_bound)
    rng = rng_from(seed, "dp-noise")
    noise = rng.normal(0.0, sigma, size=params.values.size)
    return params.with_values(params.values + noise)


def local_update(
    global_params: nn.ParamVector,
    data,
    cfg: LocalUpdateConfig,
    train_fn,
) -> nn.ParamVector:
    """One client's round: local SGD from the global model, clip, then noise.

    ``train_fn(params, data, train_config) -> (params, history)`` supplies the
    model family's training loop, so the same path is shared with centralized
    training. Zero epochs returns the clipped global model unchanged in value.
    The global parameters are never mutated.
    """
    n_items = data.shape[0] if isinstance(data, np.ndarray) else len(data[0]) if isinstance(data, tuple) else len(data)
    if n_items == 0:
        raise ValueError("local update requires a non-empty dataset")
    trained, _history = train_fn(global_params, data, cfg.train_config())
    clipped = trained if cfg.grad_clip_mode else clip_update(trained, cfg.clip_bound)
    if not cfg.dp_enabled:
        return clipped
    noise_clip = cfg.clip_bound if math.isfinite(cfg.clip_bound) else 1.0
    return add_dp_noise(
        clipped,
        cfg.epsilon,
        cfg.delta_dp,
        noise_clip,
        derive_seed(cfg.seed, "local-dp"),
    )


def validate_update(
    candidate: nn.ParamVector,
    previous: nn.ParamVector,
    policy: ValidationPolicy,
    loss_fn,
    reference_data,
) -> bool:
    """True iff |loss(candidate) - loss(previous)| <= loss_gap on the reference set."""
    if not math.isfinite(policy.loss_gap):
        return True
    gap = abs(loss_fn(candidate, reference_data) - loss_fn(previous, reference_data))
    return gap <= policy.loss_gap


def fedavg(updates) -> nn.ParamVector:
    """Sample-count-weighted coordinatewise mean of client updates."""
    updates = list(updates)
    if not updates:
        raise ValueError("fedavg needs at least one update")
    base_arch = updates[0][0].arch
    for params, _w in updates:
        if params.arch != base_arch:
            raise DimensionError("fedavg requires identical architectures")
    total = float(sum(w.sample_count for _p, w in updates))
    acc = np.zeros(base_arch.param_count)
    for params, weight in updates:
        acc += (weight.sample_count / total) * params.values
    version = max(p.version for p, _w in updates) + 1
    return nn.ParamVector(base_arch, acc, version)
