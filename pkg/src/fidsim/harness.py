"""Experiment drivers: the held-out-attack scenario protocol, the time-window
sweep, the differential-privacy sweep, the poisoning experiment, and report
writing.

Reports are self-auditing: every headline metric is stored next to the raw
counts and scores it was computed from, plus the config fingerprint and seed.
Report writing is atomic (write to a temp file, then rename) and contains no
timestamps, so identical (config, seed) runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import classifier as ac_mod
from . import detector as ad_mod
from . import metrics as mx
from . import nn
from .chain import ChainSimConfig, FLConfigs, SimulationData, run_training
from .config import RunConfig, generator_label
from .datasets import (
    GaussianClassSpec,
    PacketClassSpec,
    Scenario,
    SynthSpec,
    make_scenarios,
    normalize_scenario,
    partition_dirichlet,
    partition_iid,
    synth_packets,
    synth_traffic,
)
from .errors import ConfigError
from .fed import LocalUpdateConfig, ValidationPolicy, fedavg, ClientWeight, local_update
from .flows import (
    BENIGN,
    FlowCsvSchema,
    TimeWindow,
    aggregate_flows,
    label_flows,
    load_flow_csv,
    read_packet_csv,
    to_matrix,
)
from .util import derive_seed, rng_from

REPORT_SCHEMA_VERSION = 1


# --- config adapters ------------------------------------------------------------


def synth_spec_from_config(cfg: RunConfig) -> SynthSpec:
    classes = tuple(
        GaussianClassSpec(
            name=c["name"],
            label=generator_label(c["label"]),
            count=int(c["count"]),
            mean=(c["mean"],) if np.isscalar(c["mean"]) else tuple(c["mean"]),
            scale=float(c["scale"]),
        )
        for c in cfg.section("generator", "classes")
    )
    return SynthSpec(int(cfg.section("features", "dim")), classes)


def class_names_from_config(cfg: RunConfig) -> dict:
    return {
        generator_label(c["label"]): c["name"] for c in cfg.section("generator", "classes")
    }


def packet_classes_from_config(cfg: RunConfig) -> list:
    return [
        PacketClassSpec(
            name=c["name"],
            label=generator_label(c["label"]),
            flows=int(c["flows"]),
            duration=float(c["duration"]),
            mean_iat=float(c["mean_iat"]),
            burstiness=float(c["burstiness"]),
            length_mean=float(c["length_mean"]),
            length_std=float(c["length_std"]),
        )
        for c in cfg.section("packet_generator", "classes")
    ]


def load_dataset_flows(cfg: RunConfig):
    """Flows from the configured CSV export if present, else the synthetic generator."""
    path = cfg.section("datasets", "flow_csv")
    if path:
        class_map = {
            str(k): generator_label(v) for k, v in cfg.section("datasets", "class_map").items()
        }
        if not class_map:
            raise ConfigError("datasets.class_map is required with datasets.flow_csv")
        feature_columns = cfg.section("datasets").get("feature_columns")
        if not feature_columns:
            raise ConfigError("datasets.feature_columns is required with datasets.flow_csv")
        schema = FlowCsvSchema(
            feature_columns=tuple(feature_columns),
            label_column=cfg.section("datasets", "label_column"),
            class_map=class_map,
        )
        flows, _errors = load_flow_csv(path, schema, strict=False)
        return flows
    return synth_traffic(synth_spec_from_config(cfg), cfg.seed)


def scenarios_from_config(cfg: RunConfig, flows=None) -> list:
    flows = flows if flows is not None else load_dataset_flows(cfg)
    splits = cfg.section("splits")
    return make_scenarios(
        flows,
        seed=cfg.seed,
        fractions=(splits["train"], splits["val"], splits["test"]),
        min_class_size=int(splits["min_class_size"]),
        class_names=class_names_from_config(cfg),
    )


def chain_config_from(cfg: RunConfig, **overrides) -> ChainSimConfig:
    chain = cfg.section("chain")
    base = dict(
        n_mec=int(chain["n_mec"]),
        n_cav=int(chain["n_cav"]),
        f=int(chain["f"]),
        exclusion_window=int(chain["exclusion_window"]),
        stop_tolerance=float(chain["stop_tolerance"]),
        max_rounds=int(chain["max_rounds"]),
        signature_scheme=chain["signature"],
        latency_low=int(chain["latency"]["low"]),
        latency_high=int(chain["latency"]["high"]),
        drop_prob=float(chain["faults"]["drop"]),
        duplicate_prob=float(chain["faults"]["duplicate"]),
        malicious_fraction=float(chain["malicious"]["fraction"]),
        malicious_behavior=chain["malicious"]["behavior"],
        scoring_enabled=bool(chain["defenses"]["scoring"]),
        valup_enabled=bool(chain["defenses"]["valup"]),
        tx_valup_enabled=bool(chain["defenses"]["tx_valup"]),
        exclusion_enabled=bool(chain["defenses"]["exclusion"]),
        c_mad=float(cfg.section("detector", "c_mad")),
    )
    base.update(overrides)
    return ChainSimConfig(**base)


def fl_configs_from(cfg: RunConfig) -> FLConfigs:
    fed = cfg.section("federated")
    ad = fed["ad"]
    ac = fed["ac"]
    return FLConfigs(
        ad_local=LocalUpdateConfig(
            epochs=int(ad["epochs"]),
            batch_size=int(ad["batch_size"]),
            learning_rate=float(ad["learning_rate"]),
            clip_bound=float(ad["clip_bound"]),
            dp_enabled=bool(ad["dp"]["enabled"]),
            epsilon=float(ad["dp"]["epsilon"]),
            delta_dp=float(ad["dp"]["delta"]),
        ),
        ac_local=LocalUpdateConfig(
            epochs=int(ac["epochs"]),
            batch_size=int(ac["batch_size"]),
            learning_rate=float(ac["learning_rate"]),
        ),
        validation=ValidationPolicy(loss_gap=float(fed["loss_gap"])),
        ad_hidden=tuple(cfg.section("detector", "hidden")),
        ac_hidden=tuple(cfg.section("classifier", "hidden")),
        ac_latent=int(cfg.section("classifier", "latent")),
        nu=float(cfg.section("classifier", "nu")),
    )


def partition_tag(cfg: RunConfig) -> str:
    return "IID" if cfg.section("partition", "mode") == "iid" else "Non-IID"


# --- simulation data ---------------------------------------------------------------


def _partition(labels_or_n, n_clients: int, cfg: RunConfig, rng) -> list:
    mode = cfg.section("partition", "mode")
    if mode == "iid":
        n = labels_or_n if isinstance(labels_or_n, int) else len(labels_or_n)
        return partition_iid(n, n_clients, rng)
    alpha = float(cfg.section("partition", "alpha"))
    labels = (
        np.zeros(labels_or_n, dtype=int) if isinstance(labels_or_n, int) else labels_or_n
    )
    return partition_dirichlet(labels, n_clients, alpha, rng)


def prepare_simulation_data(scenario: Scenario, cfg: RunConfig, seed: int) -> SimulationData:
    sim = chain_config_from(cfg)
    rng = rng_from(seed, "partition")
    x_benign, _ = to_matrix(scenario.ad_train)
    cav_shards = [x_benign[idx] for idx in _partition(x_benign.shape[0], sim.n_cav, cfg, rng)]

    if scenario.ac_skipped:
        empty = np.empty((0, x_benign.shape[1]))
        mec_train = [(empty, np.empty(0, dtype=int))] * sim.n_mec
        mec_eval = [(empty, np.empty(0, dtype=int))] * sim.n_mec
        class_ids: tuple = ()
    else:
        x_attack, y_attack = to_matrix(scenario.ac_train)
        class_ids = tuple(int(c) for c in sorted(set(int(v) for v in y_attack)))
        index_of = {c: i for i, c in enumerate(class_ids)}
        y_idx = np.array([index_of[int(v)] for v in y_attack], dtype=int)
        mec_train = [
            (x_attack[i], y_idx[i]) for i in _partition(y_idx, sim.n_mec, cfg, rng)
        ]
        x_val, y_val = to_matrix(scenario.ac_val)
        yv_idx = np.array([index_of[int(v)] for v in y_val], dtype=int)
        # a validator scores candidates on everything it holds locally (its own
        # training and validation shards); tiny scoring sets make accuracy
        # gains too coarse to separate harm from noise
        mec_eval = []
        for mec_index, val_idx in enumerate(_partition(yv_idx, sim.n_mec, cfg, rng)):
            x_local = np.vstack([mec_train[mec_index][0], x_val[val_idx]])
            y_local = np.concatenate([mec_train[mec_index][1], yv_idx[val_idx]])
            mec_eval.append((x_local, y_local))

    b_test, _ = to_matrix(scenario.ad_val)
    return SimulationData(
        cav_benign=cav_shards,
        mec_attack=mec_train,
        mec_eval=mec_eval,
        b_test=b_test,
        ac_class_ids=class_ids,
    )


def client_histograms(data: SimulationData) -> dict:
    """Per-client sample counts, used to audit IID vs label-skewed partitions."""
    attack = []
    for x, y in data.mec_attack:
        counts: dict = {}
        for label in y.tolist():
            counts[str(int(label))] = counts.get(str(int(label)), 0) + 1
        attack.append(counts)
    return {
        "cav_benign_counts": [int(x.shape[0]) for x in data.cav_benign],
        "mec_attack_class_counts": attack,
    }


# --- metric bundles ------------------------------------------------------------------


def detection_report(model: ad_mod.DetectorModel, x: np.ndarray, malicious: np.ndarray) -> dict:
    verdicts = ad_mod.detect(model, x)
    errors = np.array([v.error for v in verdicts])
    predicted = np.array([v.is_malicious for v in verdicts])
    counts = mx.counts_from_predictions(malicious, predicted)
    report = mx.compute_metrics(counts)
    report["auroc"] = mx.auroc(errors, malicious) if 0 < malicious.sum() < malicious.size else None
    report["threshold"] = model.alpha
    report["scores"] = [float(e) for e in errors]
    report["is_malicious_truth"] = [bool(b) for b in malicious]
    return report


def closed_set_report(model: ac_mod.MCDDModel, x: np.ndarray, y: np.ndarray, class_names: dict) -> dict:
    predicted = ac_mod.closed_set_predictions(model, x)
    per_class = {}
    for cid in model.class_ids:
        counts = mx.counts_from_predictions(y == cid, predicted == cid)
        entry = mx.compute_metrics(counts)
        entry["name"] = class_names.get(cid, f"class{cid}")
        per_class[str(cid)] = entry
    return {
        "accuracy": float(np.mean(predicted == y)) if y.size else 0.0,
        "per_class": per_class,
        "predictions": [int(p) for p in predicted],
        "labels": [int(v) for v in y],
    }


def zero_day_report(model: ac_mod.MCDDModel, x_known: np.ndarray, x_zero: np.ndarray) -> dict:
    """Held-out class treated as the positive OOD class; score = distance to the
    closest known descriptor (negated confidence)."""
    s_known = ac_mod.confidence_scores(model, x_known)
    s_zero = ac_mod.confidence_scores(model, x_zero)
    scores = np.concatenate([-s_known, -s_zero])
    positives = np.concatenate(
        [np.zeros(s_known.size, dtype=bool), np.ones(s_zero.size, dtype=bool)]
    )
    predicted_zero = np.concatenate(
        [s_known < model.conf_threshold, s_zero < model.conf_threshold]
    )
    counts = mx.counts_from_predictions(positives, predicted_zero)
    return {
        "auroc": mx.auroc(scores, positives),
        "tnr85": mx.tnr_at_tpr(scores, positives),
        "accuracy": mx.accuracy(counts),
        "recall": mx.true_positive_rate(counts),
        "counts": mx.compute_metrics(counts)["counts"],
        "confidence_threshold": model.conf_threshold,
        "scores": [float(s) for s in scores],
        "is_zero_day": [bool(b) for b in positives],
    }


# --- scenario protocol -----------------------------------------------------------------


def run_scenario(cfg: RunConfig, scenario: Scenario, out_dir=None, seed=None) -> dict:
    """Train both models federated on one scenario and evaluate all three stages."""
    seed = cfg.seed if seed is None else seed
    norm_method = cfg.section("normalization")
    scenario, _norm = normalize_scenario(scenario, norm_method)
    data = prepare_simulation_data(scenario, cfg, seed)
    sim = chain_config_from(cfg)
    fl = fl_configs_from(cfg)
    result = run_training(data, fl, sim, seed)
    class_names = class_names_from_config(cfg)

    x_test, y_test = to_matrix(scenario.test)
    ad_section = detection_report(result.detector, x_test, y_test != BENIGN)

    if scenario.ac_skipped or result.classifier is None:
        nday_section = {"skipped": True}
        zero_section = {"skipped": True}
    else:
        x_nday, y_nday = to_matrix(scenario.test_nday)
        nday_section = closed_set_report(result.classifier, x_nday, y_nday, class_names)
        nday_section["skipped"] = False
        x_zero, _ = to_matrix(scenario.test_zero_day)
        zero_section = zero_day_report(result.classifier, x_nday, x_zero)
        zero_section["skipped"] = False

    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "kind": "scenario",
        "scenario": scenario.name,
        "zero_day_class": int(scenario.spec.zero_day_class),
        "n_day_classes": [int(c) for c in scenario.spec.n_day_classes],
        "distribution": partition_tag(cfg),
        "seed": seed,
        "config_fingerprint": cfg.fingerprint(),
        "training_manifest": scenario.training_manifest(),
        "client_histograms": client_histograms(data),
        "ad": ad_section,
        "nday": nday_section,
        "zero_day": zero_section,
        "federated": {
            "rounds": result.rounds_run,
            "stop_reason": result.stop_reason,
            "counters": _jsonable_counters(result.counters),
            "mean_gains": [
                t.get("mean_acc_gain") for t in result.transcripts if "mean_acc_gain" in t
            ],
            "excluded": sorted(result.reputation.excluded),
        },
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_report(report, out / f"scenario_{scenario.name}.json")
        result.chain.write_jsonl(out / f"ledger_{scenario.name}.jsonl")
        write_json(result.transcripts, out / f"transcripts_{scenario.name}.json")
        _scenario_csv(report, out / f"scenario_{scenario.name}.csv")
    return report


def scenario_sweep(cfg: RunConfig, out_dir=None) -> list:
    return [run_scenario(cfg, sc, out_dir=out_dir) for sc in scenarios_from_config(cfg)]


# --- time-window sweep ---------------------------------------------------------------


def _load_packets(cfg: RunConfig):
    path = cfg.section("datasets", "packets_csv")
    if path:
        packets = read_packet_csv(path)
        return packets, None
    if cfg.section("datasets", "flow_csv"):
        raise ConfigError(
            "time-window sweep needs packet-level input; a flow CSV cannot be re-windowed"
        )
    packets, labels = synth_packets(packet_classes_from_config(cfg), cfg.seed)
    return packets, labels


def sweep_time_windows(cfg: RunConfig, windows=None, out_dir=None) -> dict:
    """Re-aggregate packets per window size and run the detector pipeline on each."""
    packets, labels = _load_packets(cfg)
    if windows is None:
        windows = [TimeWindow.parse(w) for w in cfg.section("tw_sweep", "windows")]
    det = cfg.section("detector")
    rows = []
    for tw in windows:
        flows = aggregate_flows(packets, tw)
        if labels is not None:
            flows = label_flows(flows, labels)
        benign = [f for f in flows if f.label == BENIGN]
        attack = [f for f in flows if f.label not in (BENIGN,)]
        rng = rng_from(cfg.seed, "tw", tw.label())
        order = rng.permutation(len(benign))
        n_train = int(0.6 * len(benign))
        n_val = int(0.2 * len(benign))
        train = [benign[i] for i in order[:n_train]]
        val = [benign[i] for i in order[n_train : n_train + n_val]]
        test_b = [benign[i] for i in order[n_train + n_val :]]

        from .datasets import apply_normalizer, fit_normalizer

        x_train, _ = to_matrix(train)
        norm = fit_normalizer(x_train, cfg.section("normalization"))
        x_train = norm.transform(x_train)
        x_val = norm.transform(to_matrix(val)[0])
        x_test_b = norm.transform(to_matrix(test_b)[0])
        x_attack = norm.transform(to_matrix(attack)[0])

        params, _hist = ad_mod.train_detector(
            x_train,
            nn.TrainConfig(int(det["epochs"]), int(det["batch_size"]), float(det["learning_rate"]), derive_seed(cfg.seed, "tw", tw.label())),
            hidden=tuple(det["hidden"]),
        )
        alpha = ad_mod.compute_threshold(params, x_val, float(det["c_mad"]))
        model = ad_mod.DetectorModel(params, float(det["c_mad"]), alpha)
        x_all = np.vstack([x_test_b, x_attack])
        truth = np.concatenate(
            [np.zeros(x_test_b.shape[0], dtype=bool), np.ones(x_attack.shape[0], dtype=bool)]
        )
        predicted = np.array([v.is_malicious for v in ad_mod.detect(model, x_all)])
        counts = mx.counts_from_predictions(truth, predicted)
        rows.append(
            {
                "window": tw.label(),
                "window_seconds": tw.duration,
                "flow_windows": len(flows),
                "accuracy": mx.accuracy(counts),
                "f1": mx.f1_score(counts),
                "tpr": mx.true_positive_rate(counts),
                "fpr": mx.false_positive_rate(counts),
                "counts": mx.compute_metrics(counts)["counts"],
            }
        )
    rows.sort(key=lambda r: (r["window_seconds"] is None, r["window_seconds"]))
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "kind": "tw_sweep",
        "seed": cfg.seed,
        "config_fingerprint": cfg.fingerprint(),
        "rows": rows,
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_report(report, out / "tw_sweep.json")
        write_rows_csv(
            rows,
            ["window", "window_seconds", "flow_windows", "accuracy", "f1", "tpr", "fpr"],
            out / "tw_sweep.csv",
        )
    return report


# --- differential-privacy sweep ----------------------------------------------------------


def _fl_detector_accuracy(cfg: RunConfig, epsilon, seed: int) -> float:
    """Chain-free federated detector task: local updates + averaging per round.

    Uses the scenario pipeline's preprocessing (normalizer fitted on the
    training flows, threshold set on the benign validation split) so privacy
    noise is measured against the same task the full simulation trains.
    """
    dp_cfg = cfg.section("dp_sweep")
    flows = synth_traffic(synth_spec_from_config(cfg), seed)
    scenario = make_scenarios(flows, seed=seed, class_names=class_names_from_config(cfg))[-1]
    scenario, _norm = normalize_scenario(scenario, cfg.section("normalization"))
    x_train, _ = to_matrix(scenario.ad_train)
    x_val, _ = to_matrix(scenario.ad_val)
    x_test, y_test = to_matrix(scenario.test)
    truth = y_test != BENIGN

    fed_ad = cfg.section("federated", "ad")
    n_clients = int(cfg.section("chain", "n_cav"))
    rounds = 3
    shards = [x_train[i] for i in partition_iid(x_train.shape[0], n_clients, rng_from(seed, "dp-part"))]
    arch = ad_mod.autoencoder_arch(x_train.shape[1], tuple(cfg.section("detector", "hidden")))
    global_params = nn.init_params(arch, derive_seed(seed, "dp-init"))
    clip = float(dp_cfg["clip_bound"])
    for round_no in range(rounds):
        updates = []
        for client, shard in enumerate(shards):
            if shard.shape[0] == 0:
                continue
            local = LocalUpdateConfig(
                epochs=int(fed_ad["epochs"]),
                batch_size=int(fed_ad["batch_size"]),
                learning_rate=float(fed_ad["learning_rate"]),
                seed=derive_seed(seed, "dp-local", round_no, client),
                clip_bound=clip,
                dp_enabled=epsilon is not None,
                epsilon=float(epsilon) if epsilon is not None else 1.0,
                delta_dp=float(fed_ad["dp"]["delta"]),
            )
            updates.append(
                (local_update(global_params, shard, local, ad_mod.sgd_train_detector),
                 ClientWeight(str(client), shard.shape[0]))
            )
        global_params = fedavg(updates)
    alpha = ad_mod.compute_threshold(global_params, x_val, float(cfg.section("detector", "c_mad")))
    model = ad_mod.DetectorModel(global_params, float(cfg.section("detector", "c_mad")), alpha)
    predicted = np.array([v.is_malicious for v in ad_mod.detect(model, x_test)])
    return mx.accuracy(mx.counts_from_predictions(truth, predicted))


def dp_sweep(cfg: RunConfig, out_dir=None) -> dict:
    """Accuracy of the federated detector across privacy levels, seed-averaged."""
    dp_cfg = cfg.section("dp_sweep")
    n_seeds = int(dp_cfg["seeds"])
    rows = []
    for eps_raw in dp_cfg["epsilons"]:
        eps = None if (eps_raw is None or str(eps_raw).lower() in ("none", "no-dp")) else float(eps_raw)
        accs = [
            _fl_detector_accuracy(cfg, eps, derive_seed(cfg.seed, "dp-seed", i))
            for i in range(n_seeds)
        ]
        rows.append(
            {
                "epsilon": "no-dp" if eps is None else eps,
                "accuracies": [float(a) for a in accs],
                "mean_accuracy": float(np.mean(accs)),
            }
        )
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "kind": "dp_sweep",
        "seed": cfg.seed,
        "config_fingerprint": cfg.fingerprint(),
        "clip_bound": float(dp_cfg["clip_bound"]),
        "rows": rows,
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_report(report, out / "dp_sweep.json")
        write_rows_csv(rows, ["epsilon", "mean_accuracy"], out / "dp_sweep.csv")
    return report


# --- poisoning experiment -------------------------------------------------------------------


def _poisoned_run_accuracy(cfg: RunConfig, scenario: Scenario, fraction: float, defenses: bool, seed: int):
    scenario, _ = normalize_scenario(scenario, cfg.section("normalization"))
    data = prepare_simulation_data(scenario, cfg, seed)
    sim = chain_config_from(
        cfg,
        malicious_fraction=fraction,
        scoring_enabled=defenses,
        valup_enabled=defenses,
        exclusion_enabled=defenses,
    )
    fl = fl_configs_from(cfg)
    result = run_training(data, fl, sim, seed)
    x_test, y_test = to_matrix(scenario.test)
    predicted = np.array([v.is_malicious for v in ad_mod.detect(result.detector, x_test)])
    ad_acc = mx.accuracy(mx.counts_from_predictions(y_test != BENIGN, predicted))
    ac_acc = None
    if result.classifier is not None and not scenario.ac_skipped:
        x_nday, y_nday = to_matrix(scenario.test_nday)
        ac_acc = float(np.mean(ac_mod.closed_set_predictions(result.classifier, x_nday) == y_nday))
    return {
        "malicious_fraction": fraction,
        "defenses_enabled": defenses,
        "ad_accuracy": float(ad_acc),
        "ac_accuracy": ac_acc,
        "rounds": result.rounds_run,
        "stop_reason": result.stop_reason,
        "excluded": sorted(result.reputation.excluded),
        "n_malicious": len(result.node_ids["malicious"]),
    }


def poison_experiment(cfg: RunConfig, out_dir=None, fractions=None) -> dict:
    """Clean baseline vs sign-flipping workers, with and without the defenses."""
    scenario = scenarios_from_config(cfg)[-1]
    fractions = [float(f) for f in (fractions or cfg.section("poison", "fractions"))]
    seed = cfg.seed
    runs = [_poisoned_run_accuracy(cfg, scenario, 0.0, True, seed)]
    for fraction in fractions:
        runs.append(_poisoned_run_accuracy(cfg, scenario, fraction, True, seed))
    runs.append(_poisoned_run_accuracy(cfg, scenario, fractions[0], False, seed))
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "kind": "poison",
        "seed": seed,
        "config_fingerprint": cfg.fingerprint(),
        "scenario": scenario.name,
        "runs": runs,
        "baseline_ad_accuracy": runs[0]["ad_accuracy"],
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_report(report, out / "poison.json")
        write_rows_csv(
            runs,
            ["malicious_fraction", "defenses_enabled", "ad_accuracy", "ac_accuracy", "rounds", "stop_reason"],
            out / "poison.csv",
        )
    return report


# --- report IO ---------------------------------------------------------------------------


def _jsonable_counters(counters: dict) -> dict:
    return {
        key: (list(map(int, val)) if isinstance(val, list) else int(val))
        for key, val in counters.items()
    }


def write_json(obj, path) -> None:
    """Atomic: write to a sibling temp file, then rename over the target."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")
    os.replace(tmp, path)


def write_report(report: dict, path) -> None:
    write_json(report, path)


def write_rows_csv(rows, columns, path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([row.get(col) for col in columns])
    os.replace(tmp, path)


def _scenario_csv(report: dict, path) -> None:
    rows = [
        {
            "section": "ad",
            "metric": metric,
            "value": report["ad"].get(metric),
        }
        for metric in ("accuracy", "precision", "tpr", "fpr", "f1", "auroc")
    ]
    if not report["nday"].get("skipped", False):
        for cid, entry in sorted(report["nday"]["per_class"].items()):
            for metric in ("precision", "tpr", "fpr", "f1"):
                rows.append(
                    {"section": f"nday_class{cid}", "metric": metric, "value": entry[metric]}
                )
    if not report["zero_day"].get("skipped", False):
        for metric in ("tnr85", "auroc", "accuracy", "recall"):
            rows.append({"section": "zero_day", "metric": metric, "value": report["zero_day"][metric]})
    write_rows_csv(rows, ["section", "metric", "value"], path)
