"""Packet-summary ingestion and time-windowed flow feature extraction.

Ingestion starts at CSV level: either one line per packet
(``ts,src,dst,sport,dport,proto,len,dir,flags``) or one line per already
featurized flow with a caller-supplied column mapping. Raw capture formats are
out of scope.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, CorruptInputError, RowError

# Label conventions: attack classes are small non-negative ints.
BENIGN = -1
UNLABELED = -2

# TCP header flag bits (subset used by the feature schema).
FLAG_FIN = 0x01
FLAG_SYN = 0x02
FLAG_RST = 0x04
FLAG_PSH = 0x08
FLAG_ACK = 0x10

FEATURE_NAMES = (
    "packet_count",
    "byte_count",
    "duration",
    "pkt_len_mean",
    "pkt_len_std",
    "pkt_len_min",
    "pkt_len_max",
    "iat_mean",
    "iat_std",
    "iat_min",
    "iat_max",
    "fwd_packet_count",
    "bwd_packet_count",
    "fwd_byte_count",
    "bwd_byte_count",
    "syn_count",
    "ack_count",
    "fin_count",
    "rst_count",
    "psh_count",
)
FEATURE_DIM = len(FEATURE_NAMES)

PACKET_CSV_HEADER = ("ts", "src", "dst", "sport", "dport", "proto", "len", "dir", "flags")


@dataclass(frozen=True, order=True)
class FlowKey:
    """Five header properties identifying a traffic flow."""

    src: str
    dst: str
    sport: int
    dport: int
    proto: int

    def __post_init__(self):
        for port in (self.sport, self.dport):
            if not 0 <= port <= 65535:
                raise ValueError(f"port out of range: {port}")

    def as_tuple(self):
        return (self.src, self.dst, self.sport, self.dport, self.proto)


@dataclass(frozen=True)
class PacketRecord:
    key: FlowKey
    ts: float
    length: int
    forward: bool
    flags: int = 0

    def __post_init__(self):
        if not math.isfinite(self.ts):
            raise ValueError("packet timestamp must be finite")
        if self.length < 0:
            raise ValueError("packet length must be >= 0")


@dataclass(frozen=True)
class TimeWindow:
    """Aggregation window; ``duration=None`` means the full flow lifetime."""

    duration: float | None = None

    def __post_init__(self):
        if self.duration is not None and not (self.duration > 0):
            raise ValueError("time window duration must be > 0")

    @property
    def is_default(self) -> bool:
        return self.duration is None

    @classmethod
    def default(cls) -> "TimeWindow":
        return cls(None)

    @classmethod
    def parse(cls, text: str) -> "TimeWindow":
        text = str(text).strip().lower()
        if text in ("default", "flow", "none", ""):
            return cls.default()
        if text.endswith("s"):
            text = text[:-1]
        try:
            return cls(float(text))
        except ValueError as exc:
            raise ConfigError(f"cannot parse time window {text!r}") from exc

    def label(self) -> str:
        return "default" if self.is_default else f"{self.duration:g}s"


@dataclass(frozen=True)
class FlowFeatureVector:
    """One flow window's numeric features plus label and provenance."""

    key: FlowKey
    window_id: int
    features: np.ndarray
    label: int = UNLABELED
    dataset_tag: str = ""

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(feats)):
            raise ValueError("flow features must be finite")
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)

    @property
    def dim(self) -> int:
        return self.features.size

    def relabeled(self, label: int) -> "FlowFeatureVector":
        return replace(self, label=label)


def _population_stats(values: np.ndarray):
    if values.size == 0:
        return 0.0, 0.0, 0.0, 0.0
    return (
        float(values.mean()),
        float(values.std()),  # population std: well-defined for one packet
        float(values.min()),
        float(values.max()),
    )


def _window_features(packets) -> np.ndarray:
    ts = np.array([p.ts for p in packets])
    lengths = np.array([float(p.length) for p in packets])
    fwd = np.array([p.forward for p in packets], dtype=bool)
    flags = np.array([p.flags for p in packets], dtype=np.int64)
    iats = np.diff(ts)
    if np.any(iats < 0):
        raise CorruptInputError("negative inter-arrival time after sorting")
    len_mean, len_std, len_min, len_max = _population_stats(lengths)
    iat_mean, iat_std, iat_min, iat_max = _population_stats(iats)
    return np.array(
        [
            len(packets),
            lengths.sum(),
            ts[-1] - ts[0],
            len_mean,
            len_std,
            len_min,
            len_max,
            iat_mean,
            iat_std,
            iat_min,
            iat_max,
            fwd.sum(),
            (~fwd).sum(),
            lengths[fwd].sum() if fwd.any() else 0.0,
            lengths[~fwd].sum() if (~fwd).any() else 0.0,
            np.count_nonzero(flags & FLAG_SYN),
            np.count_nonzero(flags & FLAG_ACK),
            np.count_nonzero(flags & FLAG_FIN),
            np.count_nonzero(flags & FLAG_RST),
            np.count_nonzero(flags & FLAG_PSH),
        ],
        dtype=np.float64,
    )


def aggregate_flows(packets, tw: TimeWindow, dataset_tag: str = "") -> list:
    """Group packets by flow key, cut into windows, compute per-window features.

    A packet lands in window ``floor((ts - flow_start) / duration)``; windows
    with no packets are not emitted. Output is sorted by (key, window_id), so
    it never depends on input order.
    """
    groups: dict = {}
    for p in packets:
        groups.setdefault(p.key, []).append(p)
    out = []
    for key in sorted(groups, key=FlowKey.as_tuple):
        flow_pkts = sorted(groups[key], key=lambda p: p.ts)
        start = flow_pkts[0].ts
        windows: dict = {}
        for p in flow_pkts:
            if tw.is_default:
                wid = 0
            else:
                wid = int(math.floor((p.ts - start) / tw.duration))
            windows.setdefault(wid, []).append(p)
        for wid in sorted(windows):
            out.append(
                FlowFeatureVector(
                    key=key,
                    window_id=wid,
                    features=_window_features(windows[wid]),
                    dataset_tag=dataset_tag,
                )
            )
    return out


def label_flows(flows, labels_by_key: dict) -> list:
    """Attach labels (by flow key) to aggregated vectors; unknown keys stay unlabeled."""
    return [f.relabeled(labels_by_key.get(f.key, f.label)) for f in flows]


def _parse_flags(text: str) -> int:
    text = text.strip()
    return int(text, 0) if text else 0  # accepts decimal and 0x-prefixed hex


def read_packet_csv(path) -> list:
    """Parse the packet-summary CSV (header ``ts,src,...,flags``)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"packet CSV not found: {path}")
    records = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != PACKET_CSV_HEADER:
            raise CorruptInputError(
                f"{path}: expected header {','.join(PACKET_CSV_HEADER)}"
            )
        for i, row in enumerate(reader):
            if not row:
                continue
            try:
                ts = float(row[0])
                if not math.isfinite(ts):
                    raise ValueError("non-finite timestamp")
                key = FlowKey(row[1], row[2], int(row[3]), int(row[4]), int(row[5]))
                direction = row[7].strip().lower()
                if direction not in ("fwd", "bwd", "0", "1"):
                    raise ValueError(f"bad direction {row[7]!r}")
                records.append(
                    PacketRecord(
                        key=key,
                        ts=ts,
                        length=int(row[6]),
                        forward=direction in ("fwd", "0"),
                        flags=_parse_flags(row[8]),
                    )
                )
            except (ValueError, IndexError) as exc:
                raise CorruptInputError(f"{path}: row {i}: {exc}") from exc
    return records


def write_packet_csv(path, packets) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PACKET_CSV_HEADER)
        for p in packets:
            writer.writerow(
                [
                    repr(p.ts),
                    p.key.src,
                    p.key.dst,
                    p.key.sport,
                    p.key.dport,
                    p.key.proto,
                    p.length,
                    "fwd" if p.forward else "bwd",
                    p.flags,
                ]
            )


@dataclass(frozen=True)
class FlowCsvSchema:
    """Column mapping for featurized-flow CSV exports.

    ``class_map`` translates label strings into class ids (use
    :data:`BENIGN` for benign traffic).
    """

    feature_columns: tuple
    label_column: str
    class_map: dict
    dataset_tag: str = ""

    def __post_init__(self):
        object.__setattr__(self, "feature_columns", tuple(self.feature_columns))
        if not self.feature_columns:
            raise ConfigError("flow CSV schema needs at least one feature column")


def load_flow_csv(path, schema: FlowCsvSchema, strict: bool = True):
    """Parse a flow-feature CSV into vectors.

    Returns ``(flows, row_errors)``. In strict mode the first bad row raises;
    otherwise bad rows are collected and the remainder loads. A missing column
    is always a :class:`ConfigError` naming the column.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"flow CSV not found: {path}")
    flows, errors = [], []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in (*schema.feature_columns, schema.label_column):
            if col not in header:
                raise ConfigError(f"{path}: missing column {col!r}")
        for i, row in enumerate(reader):
            try:
                feats = []
                for col in schema.feature_columns:
                    value = float(row[col])
                    if not math.isfinite(value):
                        raise ValueError(f"non-finite value in column {col!r}")
                    feats.append(value)
                raw_label = (row[schema.label_column] or "").strip()
                if raw_label not in schema.class_map:
                    raise ValueError(f"unmappable label {raw_label!r}")
                key = FlowKey("csv", str(path.name), 0, 0, 0)
                flows.append(
                    FlowFeatureVector(
                        key=key,
                        window_id=i,
                        features=np.array(feats),
                        label=int(schema.class_map[raw_label]),
                        dataset_tag=schema.dataset_tag or path.stem,
                    )
                )
            except (TypeError, ValueError) as exc:
                err = RowError(i, str(exc))
                if strict:
                    raise err from exc
                errors.append(err)
    return flows, errors


def to_matrix(flows):
    """Stack flows into (features, labels) arrays; empty input gives (0, 0) shapes."""
    if not flows:
        return np.empty((0, 0)), np.empty(0, dtype=np.int64)
    x = np.stack([f.features for f in flows])
    y = np.array([f.label for f in flows], dtype=np.int64)
    return x, y
