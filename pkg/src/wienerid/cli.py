"""Command-line entry point ``identify``.

    identify run --config exp.json --out results/ [--seed N] [--replications R] [--baseline]
    identify summarize --in results/
    identify oracle cost --config exp.json --theta 1.2,0.27,1,1,1.7 [--m-eval 200]

Exit codes: 0 success, 2 configuration error, 3 divergence in at least one
replication (all outputs are still written).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

import numpy as np

from .harness import (
    ConfigError,
    ExperimentConfig,
    build_model,
    make_dataset,
    offline_cost,
    read_reports,
    run_experiment,
    summarize,
    true_parameters,
    write_reports,
)
from .streams import derive_seed

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3

log = logging.getLogger("wienerid")


def _load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["base_seed"] = args.seed
    if getattr(args, "replications", None) is not None:
        overrides["replications"] = args.replications
    if getattr(args, "baseline", False):
        overrides["baseline"] = True
    if overrides:
        doc = config.to_dict()
        doc["estimator"] = dataclasses.asdict(config.estimator)
        doc.update(overrides)
        config = ExperimentConfig.from_dict(doc)
    return config


def _parse_theta(text: str) -> np.ndarray:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"--theta must be a comma-separated list of numbers: {exc}") from exc
    if not values:
        raise ConfigError("--theta is empty")
    return np.array(values)


def cmd_run(args) -> int:
    config = _load_config(args)
    reports = run_experiment(config)
    summary = write_reports(reports, args.out, config)
    print(json.dumps({k: summary[k] for k in ("replications", "diverged")}))
    return EXIT_DIVERGED if summary["diverged"] else EXIT_OK


def cmd_summarize(args) -> int:
    try:
        reports, meta = read_reports(args.input)
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read results from {args.input}: {exc}") from exc
    truth = None
    fraction = 0.1
    if "config" in meta:
        config = ExperimentConfig.from_dict(meta["config"])
        truth = true_parameters(config, build_model(config))
        fraction = config.trailing_fraction
    summary = summarize(reports, fraction, truth)
    print(json.dumps(summary, indent=2))
    return EXIT_DIVERGED if summary["diverged"] else EXIT_OK


def cmd_oracle_cost(args) -> int:
    config = _load_config(args)
    model = build_model(config)
    theta = _parse_theta(args.theta)
    if theta.size != model.d:
        raise ConfigError(f"--theta has {theta.size} entries, model {model.names} needs {model.d}")
    if theta not in model.constraint:
        raise ConfigError(f"theta {theta.tolist()} violates {model.constraint.description}")
    run_seed = derive_seed(config.base_seed, args.replication)
    data = make_dataset(config, run_seed)
    value = offline_cost(theta, data, model, M_eval=args.m_eval, seed=run_seed,
                         memoryless=config.disturbance_paths == "memoryless")
    print(json.dumps({"theta": theta.tolist(), "names": list(model.names), "N": data.N,
                      "M_eval": args.m_eval, "replication": args.replication, "cost": value}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="identify", description="Online OE-QPEM identification of stochastic Wiener models")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def overrides(p):
        p.add_argument("--seed", type=int, help="override base_seed")
        p.add_argument("--replications", type=int, help="override the number of replications")
        p.add_argument("--baseline", action="store_true", help="ignore the disturbance (w = 0)")

    run = sub.add_parser("run", help="run an experiment and write trajectories and a summary")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    overrides(run)
    run.set_defaults(func=cmd_run)

    summ = sub.add_parser("summarize", help="print the summary of a results directory")
    summ.add_argument("--in", dest="input", required=True)
    summ.set_defaults(func=cmd_summarize)

    oracle = sub.add_parser("oracle", help="validation oracles")
    osub = oracle.add_subparsers(dest="oracle", required=True)
    cost = osub.add_parser("cost", help="offline cost V_N(theta) on the config's dataset")
    cost.add_argument("--config", required=True)
    cost.add_argument("--theta", required=True, help="comma-separated parameter values")
    cost.add_argument("--m-eval", type=int, default=200)
    cost.add_argument("--replication", type=int, default=0, help="which replication's dataset to use")
    overrides(cost)
    cost.set_defaults(func=cmd_oracle_cost)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "m_eval", 1) < 1:
            raise ConfigError("--m-eval must be at least 1")
        return args.func(args)
    except ConfigError as exc:
        print(f"identify: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
