"""Command-line entry point: ``emais train|synth|verify|replay-nems``.

Run configuration is one flat JSON document. Relative ``output_dir`` values
are resolved against ``$EMAIS_OUTPUT_ROOT`` (default: current directory).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import oracle
from .data import DatasetError, load_csv_dataset, save_csv_dataset, synthesize_gaussian_mixture
from .trainer import ConfigError, TrainConfig, TrainingAborted, TrainLog, nems_schedule, train

log = logging.getLogger("emais")

OUTPUT_ROOT_ENV = "EMAIS_OUTPUT_ROOT"

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

DATA_DEFAULTS = {
    "train_csv": None,
    "test_csv": None,
    "n_classes": None,
    "synth_classes": 10,
    "synth_per_class": 300,
    "synth_dim": 20,
    "synth_separation": 4.0,
    "synth_seed": None,
    "synth_test_fraction": 1.0 / 3.0,
    "output_dir": "runs/default",
}


def resolve_config(doc: dict) -> dict:
    """Merge defaults, reject unknown keys and validate; returns the full config."""
    train_keys = set(TrainConfig().to_dict())
    unknown = set(doc) - train_keys - set(DATA_DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    resolved = {**TrainConfig().to_dict(), **DATA_DEFAULTS, **doc}
    for key in ("T", "N", "seed", "synth_classes", "synth_per_class", "synth_dim"):
        if not isinstance(resolved[key], int) or isinstance(resolved[key], bool):
            raise ConfigError(f"{key} must be an integer")
    for key in ("lr_adjust", "nems_clamp"):
        if not isinstance(resolved[key], bool):
            raise ConfigError(f"{key} must be true or false")
    if not isinstance(resolved["hidden"], list):
        raise ConfigError("hidden must be a list of layer widths")
    TrainConfig(**{k: resolved[k] for k in train_keys})
    return resolved


def parse_overrides(pairs) -> dict:
    out = {}
    for pair in pairs or []:
        key, sep, raw = pair.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def load_config(path, overrides=None) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    doc.update(overrides or {})
    return resolve_config(doc)


def load_datasets(cfg: dict):
    if cfg["train_csv"]:
        train_set = load_csv_dataset(cfg["train_csv"], cfg["n_classes"], "train")
        test_set = None
        if cfg["test_csv"]:
            test_set = load_csv_dataset(cfg["test_csv"], train_set.n_classes, "test")
        return train_set, test_set
    seed = cfg["synth_seed"] if cfg["synth_seed"] is not None else cfg["seed"]
    return synthesize_gaussian_mixture(cfg["synth_classes"], cfg["synth_per_class"],
                                       cfg["synth_dim"], cfg["synth_separation"], seed,
                                       cfg["synth_test_fraction"])


def output_dir(cfg: dict) -> Path:
    out = Path(cfg["output_dir"])
    if not out.is_absolute():
        out = Path(os.environ.get(OUTPUT_ROOT_ENV, ".")) / out
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_curves(tlog: TrainLog, path):
    """CSV for external plotting; missing values are empty fields."""
    metric = "mAP" if any("mAP" in r for r in tlog.records) else "error"
    cols = ["t", "loss", metric, "lr", "scaled_lr", "nems", "s_w"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in tlog.records:
            w.writerow(["" if r.get(c) is None else r[c] for c in cols])


def _write_outputs(out: Path, cfg: dict, tlog: TrainLog, state, wall: float, status: str):
    tlog.write_jsonl(out / "run.jsonl")
    write_curves(tlog, out / "curves.csv")
    if state is not None and state.initialized:
        state.to_csv(out / "emais_state.csv")
    summary = {"status": status, "config": cfg, **tlog.summary, "wall_time_s": wall}
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)


def run(cfg: dict, schedule=None) -> int:
    """Train per ``cfg`` and write run.jsonl, summary.json, curves.csv (+ state)."""
    train_cfg = TrainConfig(**{k: cfg[k] for k in TrainConfig().to_dict()})
    train_set, test_set = load_datasets(cfg)
    out = output_dir(cfg)
    t0 = time.perf_counter()
    try:
        _, tlog, state = train(train_cfg, train_set, test_set, schedule)
    except TrainingAborted as exc:
        log.error("numeric abort: %s", exc)
        _write_outputs(out, cfg, exc.log, None, time.perf_counter() - t0, "aborted")
        return EXIT_NUMERIC
    _write_outputs(out, cfg, tlog, state, time.perf_counter() - t0, "ok")
    log.info("wrote %s", out)
    for k, v in tlog.summary.items():
        print(f"{k}: {v}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config, parse_overrides(args.set))
    if cfg["method"] == "uni-dynamic":
        raise ConfigError("use 'replay-nems' for method uni-dynamic")
    return run(cfg)


def cmd_replay(args) -> int:
    emais_log = TrainLog.read_jsonl(args.run)
    overrides = parse_overrides(args.set)
    overrides["method"] = "uni-dynamic"
    cfg = load_config(args.config, overrides)
    schedule = nems_schedule(emais_log)
    if schedule.size != cfg["T"]:
        raise ConfigError(f"recorded run has {schedule.size} iterations, config T={cfg['T']}")
    return run(cfg, schedule)


def cmd_synth(args) -> int:
    train_set, test_set = synthesize_gaussian_mixture(
        args.classes, args.per_class, args.dim, args.separation, args.seed, args.test_fraction)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    save_csv_dataset(train_set, out / "train.csv")
    save_csv_dataset(test_set, out / "test.csv")
    print(f"wrote {train_set.M} train / {test_set.M} test rows to {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    results = oracle.run_suite(seed=args.seed, trials=args.trials)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print("all identities hold" if ok else "IDENTITY CHECK FAILED")
    return EXIT_OK if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="emais", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a JSON run config")
    t.add_argument("config")
    t.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("synth", help="write a synthetic Gaussian-mixture dataset")
    s.add_argument("--classes", type=int, default=10)
    s.add_argument("--per-class", type=int, default=300)
    s.add_argument("--dim", type=int, default=20)
    s.add_argument("--separation", type=float, default=4.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--test-fraction", type=float, default=1.0 / 3.0)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_synth)

    v = sub.add_parser("verify", help="check the population-level identities")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--trials", type=int, default=100_000)
    v.set_defaults(func=cmd_verify)

    r = sub.add_parser("replay-nems",
                       help="uniform training with the N_ems schedule of a recorded run")
    r.add_argument("run", help="run.jsonl of an emais run")
    r.add_argument("config")
    r.add_argument("--set", action="append", metavar="KEY=VALUE")
    r.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DatasetError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
