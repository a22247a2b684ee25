"""Command-line entry point.

Subcommands: gen-data, train-ad, train-ac, simulate, evaluate, scenario-sweep,
tw-sweep, dp-sweep, poison-test. Every run reads the config file (defaults
apply when none is given), applies flag overrides, and writes reports to the
output directory. Exit codes: 0 success, 1 configuration error, 2 runtime
failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import classifier as ac_mod
from . import detector as ad_mod
from . import harness, nn
from .config import RunConfig, default_config, load_config
from .datasets import normalize_scenario
from .errors import ConfigError, FidsimError
from .flows import BENIGN, FEATURE_NAMES, TimeWindow, to_matrix, write_packet_csv
from .util import derive_seed


class _Parser(argparse.ArgumentParser):
    """argparse exits with code 2 on bad usage; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(1)


def build_parser() -> _Parser:
    parser = _Parser(prog="fidsim", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file (defaults used when omitted)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", default="out", help="output directory")

    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("gen-data", parents=[common], help="write synthetic flow and packet CSVs")
    sub.add_parser("train-ad", parents=[common], help="train the detector centrally and save it")
    sub.add_parser("train-ac", parents=[common], help="train the classifier centrally and save it")

    sim = sub.add_parser("simulate", parents=[common], help="run one federated chain simulation")
    sim.add_argument("--scenario", help="0-day class id or name (default: last class)")
    sim.add_argument("--epsilon", type=float, help="enable update privacy at this epsilon")
    sim.add_argument("--malicious-frac", type=float, help="fraction of sign-flipping edge nodes")
    sim.add_argument("--exclusion", choices=["on", "off"], help="toggle reputation-based exclusion")

    ev = sub.add_parser("evaluate", parents=[common], help="score flows with saved models")
    ev.add_argument("--detector-model", required=True)
    ev.add_argument("--classifier-model")

    sweep = sub.add_parser("scenario-sweep", parents=[common], help="run every 0-day scenario")
    sweep.add_argument("--epsilon", type=float)

    tw = sub.add_parser("tw-sweep", parents=[common], help="accuracy vs aggregation window size")
    tw.add_argument("--tw", help="comma-separated window sizes, e.g. '1,10,default'")

    sub.add_parser("dp-sweep", parents=[common], help="accuracy across privacy levels")

    poison = sub.add_parser("poison-test", parents=[common], help="poisoning-resilience experiment")
    poison.add_argument("--malicious-frac", type=float)
    poison.add_argument("--exclusion", choices=["on", "off"])
    return parser


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else default_config()
    if args.seed is not None:
        cfg.tree["seed"] = int(args.seed)
    if getattr(args, "epsilon", None) is not None:
        cfg.tree["federated"]["ad"]["dp"]["enabled"] = True
        cfg.tree["federated"]["ad"]["dp"]["epsilon"] = float(args.epsilon)
    if getattr(args, "malicious_frac", None) is not None:
        cfg.tree["chain"]["malicious"]["fraction"] = float(args.malicious_frac)
    if getattr(args, "exclusion", None) is not None:
        cfg.tree["chain"]["defenses"]["exclusion"] = args.exclusion == "on"
    return cfg


def _pick_scenario(cfg: RunConfig, wanted):
    scenarios = harness.scenarios_from_config(cfg)
    if wanted is None:
        return scenarios[-1]
    for scenario in scenarios:
        if scenario.name == str(wanted) or str(scenario.spec.zero_day_class) == str(wanted):
            return scenario
    known = ", ".join(s.name for s in scenarios)
    raise ConfigError(f"unknown scenario {wanted!r}; available: {known}")


def _cmd_gen_data(cfg: RunConfig, args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    flows = harness.load_dataset_flows(cfg)
    names = harness.class_names_from_config(cfg)
    with (out / "flows.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(FEATURE_NAMES[: flows[0].dim])
                        + [f"f{i}" for i in range(len(FEATURE_NAMES), flows[0].dim)]
                        + ["label"])
        for f in flows:
            writer.writerow([repr(v) for v in f.features] + [names.get(f.label, str(f.label))])
    packets, _labels = harness.synth_packets(
        harness.packet_classes_from_config(cfg), cfg.seed
    )
    write_packet_csv(out / "packets.csv", packets)
    print(f"wrote {len(flows)} flows and {len(packets)} packets to {out}")


def _central_splits(cfg: RunConfig):
    scenario = harness.scenarios_from_config(cfg)[-1]
    return normalize_scenario(scenario, cfg.section("normalization"))


def _cmd_train_ad(cfg: RunConfig, args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scenario, _ = _central_splits(cfg)
    det = cfg.section("detector")
    x_train, _ = to_matrix(scenario.ad_train)
    params, history = ad_mod.train_detector(
        x_train,
        nn.TrainConfig(int(det["epochs"]), int(det["batch_size"]), float(det["learning_rate"]), cfg.seed),
        hidden=tuple(det["hidden"]),
    )
    alpha = ad_mod.compute_threshold(params, to_matrix(scenario.ad_val)[0], float(det["c_mad"]))
    model = ad_mod.DetectorModel(params, float(det["c_mad"]), alpha, trained_on="central")
    ad_mod.save_detector(out / "detector.json", model, ad_mod.schema_fingerprint(FEATURE_NAMES))
    harness.write_report(
        {
            "schema_version": harness.REPORT_SCHEMA_VERSION,
            "kind": "train_ad",
            "seed": cfg.seed,
            "config_fingerprint": cfg.fingerprint(),
            "threshold": alpha,
            "loss_history": [float(v) for v in history],
        },
        out / "train_ad.json",
    )
    print(f"saved detector (threshold {alpha:.6g}) to {out / 'detector.json'}")


def _cmd_train_ac(cfg: RunConfig, args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scenario, _ = _central_splits(cfg)
    if scenario.ac_skipped:
        raise ConfigError("classifier stage skipped: the dataset has a single attack class")
    cls = cfg.section("classifier")
    x_train, y_train = to_matrix(scenario.ac_train)
    model, history = ac_mod.train_classifier(
        (x_train, _as_indices(y_train)),
        nn.TrainConfig(int(cls["epochs"]), int(cls["batch_size"]), float(cls["learning_rate"]), cfg.seed),
        nu=float(cls["nu"]),
        hidden=tuple(cls["hidden"]),
        latent=int(cls["latent"]),
    )
    model = ac_mod.MCDDModel(
        params=model.params,
        class_ids=tuple(int(c) for c in sorted(set(int(v) for v in y_train))),
        nu=model.nu,
    )
    model = model.with_threshold(
        ac_mod.confidence_and_threshold(model, (x_train, y_train))
    )
    ac_mod.save_classifier(out / "classifier.json", model, harness.class_names_from_config(cfg))
    harness.write_report(
        {
            "schema_version": harness.REPORT_SCHEMA_VERSION,
            "kind": "train_ac",
            "seed": cfg.seed,
            "config_fingerprint": cfg.fingerprint(),
            "confidence_threshold": model.conf_threshold,
            "loss_history": [float(v) for v in history],
        },
        out / "train_ac.json",
    )
    print(f"saved classifier to {out / 'classifier.json'}")


def _as_indices(y):
    ids = sorted(set(int(v) for v in y))
    index = {c: i for i, c in enumerate(ids)}
    return np.array([index[int(v)] for v in y], dtype=int)


def _cmd_simulate(cfg: RunConfig, args) -> None:
    scenario = _pick_scenario(cfg, getattr(args, "scenario", None))
    report = harness.run_scenario(cfg, scenario, out_dir=args.out)
    print(
        f"scenario {report['scenario']}: AD accuracy {report['ad']['accuracy']:.4f},"
        f" rounds {report['federated']['rounds']} ({report['federated']['stop_reason']})"
    )


def _cmd_evaluate(cfg: RunConfig, args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scenario, _ = _central_splits(cfg)
    detector = ad_mod.load_detector(args.detector_model)
    x_test, y_test = to_matrix(scenario.test)
    ad_section = harness.detection_report(detector, x_test, y_test != BENIGN)
    ad_mod.verdicts_to_csv(out / "verdicts.csv", ad_mod.detect(detector, x_test))
    report = {
        "schema_version": harness.REPORT_SCHEMA_VERSION,
        "kind": "evaluate",
        "seed": cfg.seed,
        "config_fingerprint": cfg.fingerprint(),
        "ad": ad_section,
    }
    if args.classifier_model:
        classifier = ac_mod.load_classifier(args.classifier_model)
        x_nday, y_nday = to_matrix(scenario.test_nday)
        report["nday"] = harness.closed_set_report(
            classifier, x_nday, y_nday, harness.class_names_from_config(cfg)
        )
        ac_mod.results_to_csv(
            out / "classifications.csv", ac_mod.classify(classifier, x_nday), classifier.class_ids
        )
    harness.write_report(report, out / "evaluate.json")
    print(f"AD accuracy {ad_section['accuracy']:.4f}; reports in {out}")


def _cmd_scenario_sweep(cfg: RunConfig, args) -> None:
    reports = harness.scenario_sweep(cfg, out_dir=args.out)
    for report in reports:
        line = f"scenario {report['scenario']}: AD accuracy {report['ad']['accuracy']:.4f}"
        if not report["zero_day"].get("skipped", False):
            line += f", 0-day AUROC {report['zero_day']['auroc']:.4f}"
        print(line)


def _cmd_tw_sweep(cfg: RunConfig, args) -> None:
    windows = None
    if getattr(args, "tw", None):
        windows = [TimeWindow.parse(part) for part in args.tw.split(",")]
    report = harness.sweep_time_windows(cfg, windows=windows, out_dir=args.out)
    for row in report["rows"]:
        print(f"tw={row['window']:>8}: accuracy {row['accuracy']:.4f} f1 {row['f1']:.4f}")


def _cmd_dp_sweep(cfg: RunConfig, args) -> None:
    report = harness.dp_sweep(cfg, out_dir=args.out)
    for row in report["rows"]:
        print(f"epsilon={row['epsilon']}: mean accuracy {row['mean_accuracy']:.4f}")


def _cmd_poison(cfg: RunConfig, args) -> None:
    fractions = None
    if getattr(args, "malicious_frac", None) is not None:
        fractions = [args.malicious_frac]
    report = harness.poison_experiment(cfg, out_dir=args.out, fractions=fractions)
    for run in report["runs"]:
        print(
            f"malicious {run['malicious_fraction']:.0%} defenses={'on' if run['defenses_enabled'] else 'off'}:"
            f" AD accuracy {run['ad_accuracy']:.4f}"
        )


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train-ad": _cmd_train_ad,
    "train-ac": _cmd_train_ac,
    "simulate": _cmd_simulate,
    "evaluate": _cmd_evaluate,
    "scenario-sweep": _cmd_scenario_sweep,
    "tw-sweep": _cmd_tw_sweep,
    "dp-sweep": _cmd_dp_sweep,
    "poison-test": _cmd_poison,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _load(args)
        _COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except FidsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
