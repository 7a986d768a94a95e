"""Command-line entry point.

Subcommands: knn (build a kNN edge file), synth (generate a shift
benchmark), train, eval, ablate, sweep, verify. Exit codes: 0 success,
1 a verification suite reported failures, 2 usage/configuration/data
errors.

Training runs are configured by a flat key=value text file; unknown keys
are rejected and every key has a default (see --help of the train
subcommand).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .data import (KnnSpec, ShiftBenchmarkConfig, build_knn_graph,
                   generate_shift_benchmark, load_benchmark, load_dataset,
                   load_features, split_by_domain, write_benchmark, write_edges)
from .errors import ConfigError, GlindError
from .model import Model
from .training import (ABLATION_VARIANTS, TrainingConfig, TrainingData, apply_variant,
                       evaluate, load_checkpoint, metric_for_task, save_checkpoint,
                       sweep, train, write_history, write_report)
from .verification import SUITES, run_suites, write_reports

# Every recognized config-file key: (type tag, default, description).
CONFIG_SPEC: dict[str, tuple[str, object, str]] = {
    "kind": ("str", "gcn", "layer kind: gcn | gat | trans"),
    "num_layers": ("int", 2, "number of message-passing layers L"),
    "hidden": ("int", 16, "hidden width d"),
    "branches": ("int", 4, "diffusivity hypotheses per layer K"),
    "tau": ("float", 1.0, "Gumbel-Softmax temperature"),
    "alpha_res": ("float", 0.5, "residual step weight"),
    "lambda": ("float", 1.0, "KL regularization coefficient"),
    "lr": ("float", 0.01, "Adam learning rate"),
    "weight_decay": ("float", 0.0, "decoupled weight decay"),
    "dropout": ("float", 0.0, "dropout probability in [0, 1)"),
    "epochs": ("int", 500, "fixed training budget"),
    "seed": ("int", 0, "seed for init, noise, and splits"),
    "prior": ("str", "mixture", "prior: mixture | posterior-average"),
    "gumbel": ("str", "paper-literal", "gumbel mode: paper-literal | log-space"),
    "attn": ("str", "literal", "gat normalization: literal | softmax"),
    "pseudo_size": ("int", 0, "pseudo-dataset size T; 0 means int(0.01 * N)"),
    "pseudo_edge_prob": ("float", -1.0, "pseudo edge probability; negative means graph density"),
    "leaky_slope": ("float", 0.2, "LeakyReLU slope in (0, 1)"),
    "shared_gumbel": ("bool", False, "share Gumbel noise across instances per layer"),
    "stop_prior_gradient": ("bool", False, "detach the prior from the tape"),
    "residual": ("str", "add", "residual mode: add | replace"),
    "self_term": ("bool", True, "include the self-transform path"),
    "plain_baseline": ("bool", False, "ungated single-branch residual baseline"),
    "data_dir": ("str", "", "benchmark directory containing manifest.json"),
    "features": ("str", "", "features.tsv path (single-dataset mode)"),
    "labels": ("str", "", "labels.tsv path (single-dataset mode)"),
    "edges": ("str", "", "edges.tsv path; empty means no edges"),
    "domains": ("str", "", "domains.tsv path; empty means all domain 0"),
    "task": ("str", "classification", "task: classification | binary | regression"),
    "num_classes": ("int", 0, "class count; 0 infers from labels"),
    "train_domains": ("intlist", [0], "comma-separated training domain ids"),
    "test_domains": ("intlist", [], "comma-separated test domain ids"),
    "valid_fraction": ("float", 0.25, "validation fraction held out of training domains"),
    "out_dir": ("str", "run", "output directory for history/report/checkpoint"),
}

_CONFIG_FIELD_NAMES = {
    "lambda": "kl_weight",
    "prior": "prior_mode",
    "gumbel": "gumbel_mode",
    "attn": "attn_mode",
    "residual": "residual_mode",
}


def _parse_value(kind: str, raw: str, key: str):
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind == "intlist":
            return [int(x) for x in raw.split(",") if x.strip()] if raw else []
        return raw
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {kind}") from None


def parse_config_file(path: str) -> dict:
    values = {k: default for k, (_, default, _) in CONFIG_SPEC.items()}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    for i, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{i}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in CONFIG_SPEC:
            raise ConfigError(f"{path}:{i}: unknown config key {key!r}")
        values[key] = _parse_value(CONFIG_SPEC[key][0], raw, key)
    return values


def training_config_from(values: dict) -> TrainingConfig:
    kwargs = {}
    for field in dataclasses.fields(TrainingConfig):
        key = next((k for k, v in _CONFIG_FIELD_NAMES.items() if v == field.name), field.name)
        if key in values:
            kwargs[field.name] = values[key]
    return TrainingConfig(**kwargs)


def load_training_data(values: dict) -> TrainingData:
    if values["data_dir"]:
        manifest_path = os.path.join(values["data_dir"], "manifest.json")
        domains, manifest = load_benchmark(manifest_path)
        train_doms = values["train_domains"] if values["train_domains"] != [0] or \
            values["test_domains"] else manifest["train_domains"]
        test_doms = values["test_domains"] or manifest["test_domains"]
        return TrainingData.from_domains(domains, train_doms, test_doms,
                                         values["valid_fraction"], seed=values["seed"])
    if not values["features"] or not values["labels"]:
        raise ConfigError("config needs either data_dir or features+labels paths")
    dataset, graph = load_dataset(
        values["features"], values["labels"],
        values["edges"] or None, values["domains"] or None,
        task=values["task"], num_classes=values["num_classes"],
    )
    splits = split_by_domain(dataset, values["train_domains"], values["test_domains"],
                             values["valid_fraction"], seed=values["seed"])
    return TrainingData.from_single(dataset, graph, splits)


def _run_training(values: dict, config: TrainingConfig) -> dict:
    data = load_training_data(values)
    result = train(data, config)
    out_dir = values["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    write_history(os.path.join(out_dir, "history.jsonl"), result.history)
    report = write_report(os.path.join(out_dir, "report.json"), result.history, config)
    save_checkpoint(os.path.join(out_dir, "checkpoint.bin"), result.best_params)
    return report


# -- subcommands ------------------------------------------------------------------


def cmd_knn(args) -> int:
    metric = args.metric
    theta = args.theta
    if theta != 0.0 and metric == "cosine":
        metric = "angle-biased-cosine"
    spec = KnnSpec(k=args.k, metric=metric, theta_degrees=theta)
    features = load_features(args.features)
    graph = build_knn_graph(features, spec)
    write_edges(args.out, graph)
    print(f"wrote {graph.num_undirected_edges} undirected edges to {args.out}")
    return 0


PRESETS = {
    "knn-shift": [KnnSpec(k=k, metric="euclidean") for k in (2, 3, 4, 8, 9, 10)],
    "angle-shift": [KnnSpec(k=5, metric="angle-biased-cosine" if theta else "cosine",
                            theta_degrees=float(theta))
                    for theta in (0, 30, 90, 150, 160, 170)],
}


def cmd_synth(args) -> int:
    if args.preset not in PRESETS:
        raise ConfigError(f"unknown preset {args.preset!r}; expected one of {sorted(PRESETS)}")
    config = ShiftBenchmarkConfig(
        seed=args.seed, n=args.n, dim=args.dim, classes=args.classes,
        domain_specs=tuple(PRESETS[args.preset]), gamma=args.gamma,
        center_scale=args.center_scale, noise_scale=args.noise_scale,
    )
    domains = generate_shift_benchmark(config)
    manifest = write_benchmark(args.out_dir, domains, [0, 1, 2], [3, 4, 5], {
        "preset": args.preset, "seed": args.seed, "n": args.n, "dim": args.dim,
        "classes": args.classes, "gamma": args.gamma,
        "center_scale": args.center_scale, "noise_scale": args.noise_scale,
    })
    print(f"wrote {len(domains)} domains under {args.out_dir} (manifest: {manifest})")
    return 0


def cmd_train(args) -> int:
    values = parse_config_file(args.config)
    report = _run_training(values, training_config_from(values))
    print(json.dumps(report["metrics"], sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    values = parse_config_file(args.config)
    config = training_config_from(values)
    data = load_training_data(values)
    from .training import build_model
    model = build_model(data, config)
    model.load_arrays(load_checkpoint(args.checkpoint))
    metric = metric_for_task(data.task)
    vals = []
    for unit in data.units:
        rows = getattr(unit.splits, args.split)
        if rows.size:
            vals.append(evaluate(model, unit.dataset, unit.graph, rows, metric))
    if not vals:
        raise ConfigError(f"no instances in split {args.split!r}")
    out = {"split": args.split, "metric": metric, "value": float(np.mean(vals)),
           "units": len(vals)}
    print(json.dumps(out, sort_keys=True))
    return 0


def cmd_ablate(args) -> int:
    values = parse_config_file(args.config)
    config = apply_variant(training_config_from(values), args.variant)
    report = _run_training(values, config)
    print(json.dumps(report["metrics"], sort_keys=True))
    return 0


def _sweep_worker(payload):
    config_path, param, value = payload
    values = parse_config_file(config_path)
    base = training_config_from(values)
    rows = sweep(load_training_data(values), base, param, [value])
    return rows[0]


def cmd_sweep(args) -> int:
    values = parse_config_file(args.config)
    base = training_config_from(values)
    field_types = {f.name: f.type for f in dataclasses.fields(TrainingConfig)}
    name = _CONFIG_FIELD_NAMES.get(args.param, args.param)
    if name not in field_types:
        raise ConfigError(f"unknown sweep parameter {args.param!r}")
    current = getattr(base, name)
    caster = type(current)
    parsed = [caster(v) if not isinstance(current, bool) else _parse_value("bool", v, name)
              for v in args.values.split(",") if v.strip()]
    if not parsed:
        raise ConfigError("sweep needs at least one value")

    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_worker,
                                 [(args.config, name, v) for v in parsed]))
    else:
        rows = sweep(load_training_data(values), base, name, parsed)

    os.makedirs(values["out_dir"], exist_ok=True)
    out_path = os.path.join(values["out_dir"], "sweep.json")
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for row in rows:
        print(json.dumps(row, sort_keys=True))
    return 0


def cmd_verify(args) -> int:
    names = sorted(SUITES) if args.suite == "all" else [args.suite]
    reports = run_suites(names, seed=args.seed)
    write_reports(args.out, reports)
    failed = [r for r in reports if not r.passed]
    print(f"{len(reports) - len(failed)}/{len(reports)} oracle checks passed "
          f"(report: {args.out})")
    for r in failed:
        print(f"FAIL {r.suite}.{r.name}: value={r.value} tolerance={r.tolerance}",
              file=sys.stderr)
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glind",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("knn", help="build a kNN edge file from features")
    p.add_argument("--features", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--metric", default="euclidean",
                   choices=["euclidean", "cosine", "angle-biased-cosine"])
    p.add_argument("--theta", type=float, default=0.0,
                   help="angle bias in degrees (cosine metrics only)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_knn)

    p = sub.add_parser("synth", help="generate a synthetic shift benchmark")
    p.add_argument("--preset", required=True, choices=sorted(PRESETS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--gamma", type=float, default=1.5)
    p.add_argument("--center-scale", type=float, default=3.0, dest="center_scale")
    p.add_argument("--noise-scale", type=float, default=1.0, dest="noise_scale")
    p.add_argument("--out-dir", required=True, dest="out_dir")
    p.set_defaults(func=cmd_synth)

    config_help = "config file keys (key = value per line):\n" + "\n".join(
        f"  {k:<20} default={d!r}  {h}" for k, (_, d, h) in CONFIG_SPEC.items())

    p = sub.add_parser("train", help="train a model from a config file",
                       epilog=config_help,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=["train", "valid", "test"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train one ablation variant")
    p.add_argument("--config", required=True)
    p.add_argument("--variant", required=True, choices=list(ABLATION_VARIANTS))
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="train once per value of one config parameter")
    p.add_argument("--config", required=True)
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="run oracle suites")
    p.add_argument("--suite", default="all", choices=["all"] + sorted(SUITES))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="oracle-report.jsonl")
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except GlindError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
