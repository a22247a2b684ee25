"""Synthetic traffic, normalization, train/val/test splits, and 0-day scenarios."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, LabelError, NotReadyError
from .flows import BENIGN, FlowFeatureVector, FlowKey, PacketRecord, to_matrix
from .util import rng_from

MINMAX = "minmax"
ZSCORE = "zscore"


@dataclass(frozen=True)
class Normalizer:
    """Affine per-feature map fitted once on training data and reapplied as-is."""

    method: str
    offset: np.ndarray  # min (minmax) or mean (zscore)
    scale: np.ndarray  # span or population std; 0 marks a constant feature

    def __post_init__(self):
        if self.method not in (MINMAX, ZSCORE):
            raise ConfigError(f"unknown normalization method {self.method!r}")

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        safe = np.where(self.scale == 0.0, 1.0, self.scale)
        out = (x - self.offset) / safe
        # constant features map to 0 everywhere, train and test alike
        return np.where(self.scale == 0.0, 0.0, out)


def fit_normalizer(x: np.ndarray, method: str = MINMAX) -> Normalizer:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ConfigError("normalizer needs at least one training row")
    if method == MINMAX:
        lo = x.min(axis=0)
        return Normalizer(MINMAX, lo, x.max(axis=0) - lo)
    if method == ZSCORE:
        return Normalizer(ZSCORE, x.mean(axis=0), x.std(axis=0))
    raise ConfigError(f"unknown normalization method {method!r}")


def normalize(flows, method: str = MINMAX):
    """Fit on the given flows and transform them; returns (flows', Normalizer)."""
    if not flows:
        raise ConfigError("cannot fit a normalizer on zero flows")
    x, _ = to_matrix(flows)
    norm = fit_normalizer(x, method)
    return apply_normalizer(norm, flows), norm


def apply_normalizer(norm: Normalizer, flows):
    """Reapply stored statistics; never refits."""
    x, _ = to_matrix(flows)
    if x.shape[0] == 0:
        return []
    x = norm.transform(x)
    return [replace(f, features=x[i]) for i, f in enumerate(flows)]


# --- synthetic feature-space traffic -----------------------------------------


@dataclass(frozen=True)
class GaussianClassSpec:
    """Isotropic Gaussian blob for one traffic class in feature space."""

    name: str
    label: int
    count: int
    mean: tuple  # scalar broadcasts across all features
    scale: float

    def __post_init__(self):
        if self.scale <= 0:
            raise ConfigError(f"class {self.name!r}: covariance scale must be > 0")
        if self.count <= 0:
            raise ConfigError(f"class {self.name!r}: count must be > 0")

    def mean_vector(self, dim: int) -> np.ndarray:
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        if mean.size == 1:
            return np.full(dim, mean[0])
        if mean.size != dim:
            raise ConfigError(
                f"class {self.name!r}: mean length {mean.size} != feature dim {dim}"
            )
        return mean


@dataclass(frozen=True)
class SynthSpec:
    dim: int
    classes: tuple

    def __post_init__(self):
        if self.dim <= 0:
            raise ConfigError("feature dimensionality must be > 0")
        if not self.classes:
            raise ConfigError("generator needs at least one class")


def synth_traffic(spec: SynthSpec, seed: int) -> list:
    """Deterministic labeled flows drawn from the per-class Gaussian mixture."""
    flows = []
    flow_index = 0
    for cls in spec.classes:
        rng = rng_from(seed, "synth", cls.name, cls.label)
        x = rng.normal(cls.mean_vector(spec.dim), cls.scale, size=(cls.count, spec.dim))
        for row in x:
            key = FlowKey(
                f"10.{(flow_index >> 16) & 0xFF}.{(flow_index >> 8) & 0xFF}.{flow_index & 0xFF}",
                "10.255.255.1",
                1024 + (flow_index % 60000),
                443,
                6,
            )
            flows.append(
                FlowFeatureVector(
                    key=key,
                    window_id=0,
                    features=row,
                    label=cls.label,
                    dataset_tag="synthetic",
                )
            )
            flow_index += 1
    return flows


# --- synthetic packet traces (for time-window experiments) --------------------


@dataclass(frozen=True)
class PacketClassSpec:
    """Packet-level behavior of one traffic class.

    Benign-like classes send steadily; attack-like classes send in bursts. The
    distinguishing structure only becomes visible over a long observation
    window, which is the point of the time-window sweep.
    """

    name: str
    label: int
    flows: int
    duration: float
    mean_iat: float
    burstiness: float  # 0 = steady; >0 concentrates packets into bursts
    length_mean: float
    length_std: float
    dport: int = 80

    def __post_init__(self):
        if min(self.flows, self.duration, self.mean_iat, self.length_mean) <= 0:
            raise ConfigError(f"class {self.name!r}: sizes and rates must be > 0")


def synth_packets(classes, seed: int):
    """Generate packet traces; returns (packets, labels_by_flow_key)."""
    packets = []
    labels = {}
    flow_index = 0
    for cls in classes:
        rng = rng_from(seed, "packets", cls.name, cls.label)
        for _ in range(cls.flows):
            key = FlowKey(
                f"172.16.{(flow_index >> 8) & 0xFF}.{flow_index & 0xFF}",
                "172.16.0.1",
                2048 + (flow_index % 50000),
                cls.dport,
                6,
            )
            labels[key] = cls.label
            ts = 0.0
            while ts < cls.duration:
                length = max(40, int(rng.normal(cls.length_mean, cls.length_std)))
                packets.append(
                    PacketRecord(key=key, ts=ts, length=length, forward=bool(rng.random() < 0.7))
                )
                gap = rng.exponential(cls.mean_iat)
                if cls.burstiness > 0 and rng.random() < 0.2:
                    gap += cls.burstiness * cls.mean_iat  # long silence between bursts
                ts += max(gap, 1e-4)
            flow_index += 1
    return packets, labels


# --- splits and 0-day scenarios -----------------------------------------------


@dataclass(frozen=True)
class ScenarioSpec:
    zero_day_class: int
    n_day_classes: tuple
    split_fractions: tuple = (0.6, 0.2, 0.2)

    def __post_init__(self):
        if self.zero_day_class in self.n_day_classes:
            raise ConfigError("the 0-day class cannot also be an N-day class")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ConfigError("split fractions must sum to 1.0")


@dataclass
class Scenario:
    """One held-out-attack evaluation scenario with materialized splits."""

    spec: ScenarioSpec
    name: str
    ad_train: list  # benign only
    ad_val: list  # benign only
    ac_train: list  # N-day attacks only
    ac_val: list
    test_benign: list
    test_nday: list
    test_zero_day: list  # 100% of the held-out class

    @property
    def test(self) -> list:
        return self.test_benign + self.test_nday + self.test_zero_day

    @property
    def ac_skipped(self) -> bool:
        # single-attack-class datasets leave nothing to train the classifier on
        return len(self.spec.n_day_classes) == 0

    def training_manifest(self) -> dict:
        """Class histogram of every training/validation split, for audits."""
        manifest = {}
        for split_name, flows in (
            ("ad_train", self.ad_train),
            ("ad_val", self.ad_val),
            ("ac_train", self.ac_train),
            ("ac_val", self.ac_val),
        ):
            counts: dict = {}
            for f in flows:
                counts[int(f.label)] = counts.get(int(f.label), 0) + 1
            manifest[split_name] = counts
        return manifest


def split_sizes(n: int, fractions) -> tuple:
    """Floor each fraction; the remainder goes to the training share."""
    sizes = [int(np.floor(frac * n)) for frac in fractions]
    sizes[0] += n - sum(sizes)
    return tuple(sizes)


def _split_three(items: list, fractions, rng) -> tuple:
    order = rng.permutation(len(items))
    shuffled = [items[i] for i in order]
    n_train, n_val, _ = split_sizes(len(items), fractions)
    return (
        shuffled[:n_train],
        shuffled[n_train : n_train + n_val],
        shuffled[n_train + n_val :],
    )


def make_scenarios(
    flows,
    seed: int,
    classes=None,
    fractions=(0.6, 0.2, 0.2),
    min_class_size: int = 10,
    class_names: dict | None = None,
) -> list:
    """One scenario per attack class: that class is the 0-day and appears only in test.

    Benign flows split 60/20/20 into detector train/val/test; every N-day class
    splits 60/20/20 into classifier train/val/test. Shuffles are seeded and
    per-class, so scenarios are reproducible and stratified.
    """
    by_class: dict = {}
    for f in flows:
        by_class.setdefault(int(f.label), []).append(f)
    benign = by_class.pop(BENIGN, [])
    if not benign:
        raise LabelError("scenario construction requires benign flows")
    attack_classes = sorted(by_class) if classes is None else sorted(int(c) for c in classes)
    if not attack_classes:
        raise LabelError("scenario construction requires at least one attack class")
    for cls in attack_classes:
        if len(by_class.get(cls, [])) < min_class_size:
            raise LabelError(
                f"attack class {cls} has {len(by_class.get(cls, []))} samples,"
                f" fewer than the {min_class_size} required"
            )

    class_splits = {}
    benign_rng = rng_from(seed, "split", "benign")
    benign_split = _split_three(benign, fractions, benign_rng)
    for cls in attack_classes:
        class_splits[cls] = _split_three(
            by_class[cls], fractions, rng_from(seed, "split", "class", cls)
        )

    scenarios = []
    names = class_names or {}
    for zero_day in attack_classes:
        nday = tuple(c for c in attack_classes if c != zero_day)
        ac_train, ac_val, test_nday = [], [], []
        for cls in nday:
            tr, va, te = class_splits[cls]
            ac_train.extend(tr)
            ac_val.extend(va)
            test_nday.extend(te)
        zero_flows = [f for split in class_splits[zero_day] for f in split]
        scenarios.append(
            Scenario(
                spec=ScenarioSpec(zero_day, nday, tuple(fractions)),
                name=str(names.get(zero_day, f"class{zero_day}")),
                ad_train=list(benign_split[0]),
                ad_val=list(benign_split[1]),
                ac_train=ac_train,
                ac_val=ac_val,
                test_benign=list(benign_split[2]),
                test_nday=test_nday,
                test_zero_day=zero_flows,
            )
        )
    return scenarios


def normalize_scenario(scenario: Scenario, method: str = MINMAX):
    """Fit on the scenario's training flows only, then map every split.

    The 0-day class never contributes to the fit (it is test-only).
    """
    fit_flows = scenario.ad_train + scenario.ac_train
    x, _ = to_matrix(fit_flows)
    norm = fit_normalizer(x, method)
    mapped = {
        name: apply_normalizer(norm, getattr(scenario, name))
        for name in (
            "ad_train",
            "ad_val",
            "ac_train",
            "ac_val",
            "test_benign",
            "test_nday",
            "test_zero_day",
        )
    }
    return replace_scenario(scenario, **mapped), norm


def replace_scenario(scenario: Scenario, **splits) -> Scenario:
    merged = {
        name: splits.get(name, getattr(scenario, name))
        for name in (
            "ad_train",
            "ad_val",
            "ac_train",
            "ac_val",
            "test_benign",
            "test_nday",
            "test_zero_day",
        )
    }
    return Scenario(spec=scenario.spec, name=scenario.name, **merged)


# --- client partitioning -------------------------------------------------------


def partition_iid(n_items: int, n_clients: int, rng) -> list:
    """Shuffle and deal items round-robin; shard sizes differ by at most one."""
    order = rng.permutation(n_items)
    return [np.sort(order[i::n_clients]) for i in range(n_clients)]


def partition_dirichlet(labels: np.ndarray, n_clients: int, alpha: float, rng) -> list:
    """Label-skewed partition: per class, client shares ~ Dirichlet(alpha).

    Large alpha converges to the IID per-class proportions. Every client is
    guaranteed at least one item when there are enough items to go around.
    """
    labels = np.asarray(labels)
    shards = [[] for _ in range(n_clients)]
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(idx.size)]
        shares = rng.dirichlet(np.full(n_clients, float(alpha)))
        counts = np.floor(shares * idx.size).astype(int)
        remainder = idx.size - counts.sum()
        for slot in np.argsort(-(shares * idx.size - counts))[:remainder]:
            counts[slot] += 1
        pos = 0
        for client, count in enumerate(counts):
            shards[client].extend(idx[pos : pos + count])
            pos += count
    # repair empty shards so every client can participate
    sizes = [len(s) for s in shards]
    for client in range(n_clients):
        if not shards[client]:
            donor = int(np.argmax(sizes))
            if sizes[donor] > 1:
                shards[client].append(shards[donor].pop())
                sizes[donor] -= 1
                sizes[client] += 1
    return [np.sort(np.array(sorted(s), dtype=int)) for s in shards]
