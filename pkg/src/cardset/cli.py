"""Command line entry point.

Every subcommand reads an optional JSON config (``--config``) whose values may
be overridden with ``--set key=value`` (value parsed as JSON, else taken as a
string). Exit codes: 0 success, 1 failed gradient check, 2 config error,
3 data error, 4 bound violation, 5 training divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .core import InvalidInputError
from .cost import build_cost, load_cost_csv
from .data import DataError, GaussianSpec, generate_gaussian, load_csv
from .evaluation import (
    ConfigError, ExperimentConfig, VerifyConfig, conformal_curve, fit_seed, run_experiment,
    topk_curve, train_config_from_dict, verify_bounds_command, write_bound_csv, write_curve_csv,
    write_record,
)
from .gradcheck import grad_check_all
from .models import LinearModel, TrainingDivergedError, load_model, save_model, train_base_n, train_selector
from .sets import CalibrationTooSmallError, TopKFamily

log = logging.getLogger("cardset")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_DATA, EXIT_BOUND, EXIT_DIVERGED = 0, 1, 2, 3, 4, 5


def _load_config(args) -> dict:
    cfg = {}
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{args.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise ConfigError(f"{args.config}: top level must be an object")
    for item in args.set or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        cfg[key] = value
    return cfg


def _only(cfg: dict, allowed) -> dict:
    unknown = set(cfg) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def cmd_gen_data(args) -> int:
    cfg = _only(_load_config(args), {f.name for f in fields(GaussianSpec)} | {"m", "sample_seed"})
    m = int(cfg.pop("m", 1000))
    sample_seed = int(cfg.pop("sample_seed", 0))
    if cfg.get("priors") is not None:
        cfg["priors"] = tuple(cfg["priors"])
    if cfg.get("means") is not None:
        cfg["means"] = tuple(tuple(r) for r in cfg["means"])
    try:
        spec = GaussianSpec(**cfg)
    except DataError as exc:
        raise ConfigError(str(exc)) from None
    generate_gaussian(spec, m, sample_seed).to_csv(args.out)
    sidecar = dict(asdict(spec), m=m, sample_seed=sample_seed)
    Path(str(args.out) + ".spec.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n",
                                                  encoding="utf-8")
    return EXIT_OK


def cmd_train_base(args) -> int:
    cfg = train_config_from_dict(_load_config(args))
    data = load_csv(args.data, args.n_classes)
    save_model(train_base_n(data.features, data.labels, data.n_classes, cfg), args.out)
    return EXIT_OK


def cmd_build_costs(args) -> int:
    cfg = _only(_load_config(args), {"K", "lam", "cost_kind"})
    data = load_csv(args.data, args.n_classes)
    base = load_model(args.model)
    if not isinstance(base, LinearModel):
        raise ConfigError("build-costs needs a base (linear) checkpoint")
    fam = TopKFamily(base.scores(data.features), tuple(cfg.get("K", (1, 2, 4, 8))))
    build_cost(fam, data.labels, float(cfg.get("lam", 0.05)), cfg.get("cost_kind", "logarithmic")).to_csv(args.out)
    return EXIT_OK


def cmd_train_selector(args) -> int:
    cfg = train_config_from_dict(_load_config(args))
    data = load_csv(args.data)
    costs = load_cost_csv(args.costs)
    save_model(train_selector(data.features, costs, cfg), args.out)
    return EXIT_OK


def _experiment(args) -> ExperimentConfig:
    return ExperimentConfig.from_dict(_load_config(args))


def cmd_sweep(args) -> int:
    cfg = _experiment(args)
    baselines = tuple(b for b in args.baselines.split(",") if b)
    result = run_experiment(cfg, baselines)
    write_curve_csv(result.points, args.out)
    if args.record:
        write_record(result, args.record)
    return EXIT_OK


def cmd_topk_curve(args) -> int:
    cfg = _experiment(args)
    points = []
    for seed in cfg.seeds:
        art = fit_seed(cfg, seed)
        points += topk_curve(art.base, art.splits.test, cfg.K, seed)
    write_curve_csv(points, args.out)
    return EXIT_OK


def cmd_conformal(args) -> int:
    cfg = _experiment(args)
    points = []
    for seed in cfg.seeds:
        art = fit_seed(cfg, seed)
        points += conformal_curve(art.base, art.splits, cfg.alphas, seed)
    write_curve_csv(points, args.out)
    return EXIT_OK


def cmd_verify_bounds(args) -> int:
    try:
        cfg = VerifyConfig.from_dict(_load_config(args))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    reports = verify_bounds_command(cfg)
    if args.out:
        write_bound_csv(reports, args.out)
    bad = [r for r in reports if not r.ok]
    print(f"{len(reports)} trials, {len(bad)} violations")
    for r in bad[:20]:
        print(f"  trial {r.trial_id} {r.kind} k={r.k}: lhs={r.lhs:.6g} rhs={r.rhs:.6g} margin={r.margin:.3g}")
    return EXIT_BOUND if bad else EXIT_OK


def cmd_grad_check(args) -> int:
    cfg = _only(_load_config(args), {"n_instances", "seed"})
    results = grad_check_all(int(cfg.get("n_instances", 1000)), int(cfg.get("seed", 0)))
    for r in results:
        print(f"{'ok  ' if r.ok else 'FAIL'} {r.name:34s} checked={r.checked} "
              f"skipped={r.skipped} max_rel_err={r.max_rel_error:.3g}")
    return EXIT_OK if all(r.ok for r in results) else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cardset", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.set_defaults(func=func)
        return p

    p = add("gen-data", cmd_gen_data, "draw a synthetic Gaussian dataset to CSV")
    p.add_argument("--out", required=True)
    p = add("train-base", cmd_train_base, "fit the linear base classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--n-classes", type=int)
    p.add_argument("--out", required=True)
    p = add("build-costs", cmd_build_costs, "cost tensor of the top-k family of a base model")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--n-classes", type=int)
    p.add_argument("--out", required=True)
    p = add("train-selector", cmd_train_selector, "fit the MLP selector on a cost CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--costs", required=True)
    p.add_argument("--out", required=True)
    p = add("sweep", cmd_sweep, "lambda sweep with baselines")
    p.add_argument("--out", required=True)
    p.add_argument("--record", help="JSON experiment record")
    p.add_argument("--baselines", default="topk", help="comma list from {topk,conformal}")
    p = add("topk-curve", cmd_topk_curve, "fixed top-k baseline curve")
    p.add_argument("--out", required=True)
    p = add("conformal", cmd_conformal, "split conformal baseline curve")
    p.add_argument("--out", required=True)
    p = add("verify-bounds", cmd_verify_bounds, "randomized consistency-bound sweep")
    p.add_argument("--out")
    add("grad-check", cmd_grad_check, "finite-difference check of every loss gradient")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CalibrationTooSmallError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except InvalidInputError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
