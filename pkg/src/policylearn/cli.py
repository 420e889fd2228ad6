"""Command-line entry point: ``simulate``, ``fit``, ``eval`` and ``bench``.

Every subcommand reads a JSON ``--config``, takes a master ``--seed`` and
writes its outputs into ``--out``. Only ``bench`` uses ``--workers``.
"""
import argparse
import sys
from pathlib import Path

import numpy as np

from . import nn
from .bench import ExperimentPlan, fit_method, run_experiment, write_report
from .data import (
    DataFormatError,
    Dataset,
    dump_json,
    load_dataset,
    load_json,
    load_scored_dataset,
    write_dataset,
    write_scored_dataset,
)
from .nuisance import ScoreConfig, compute_scores, fit_nuisances
from .scenarios import (
    FixtureSpec,
    generate_data,
    generate_fixture,
    oracle_policy_value,
    sample_scenario,
    scenario_from_dict,
)
from .surrogate import PolicyModel


def _policy_spec(name: str) -> nn.MlpSpec:
    if name not in ("linear", "flexible"):
        raise ValueError(f"unknown policy class {name!r}")
    return nn.linear_spec(2) if name == "linear" else nn.flexible_spec(2)


def cmd_simulate(cfg: dict, seed: int, out: Path) -> None:
    kind = cfg.get("scenario", "Linear")
    n = int(cfg.get("n", 1000))
    if kind == "WellSpecFixture":
        fixture = FixtureSpec.from_dict(cfg.get("fixture", {}))
        dump_json(fixture.to_dict(), out / "scenario.json")
        write_scored_dataset(generate_fixture(fixture, n, seed, "train"), out / "scored.csv")
        return
    spec = sample_scenario(kind, int(cfg.get("scenario_seed", seed)))
    dump_json(spec.to_dict(), out / "scenario.json")
    write_dataset(generate_data(spec, n, seed, "train"), out / "train.csv")
    tuning_n = int(cfg.get("tuning_n", n))
    if tuning_n > 0:
        write_dataset(generate_data(spec, tuning_n, seed, "tune"), out / "tune.csv")


def _scored_from_config(cfg: dict, seed: int):
    if "scored" in cfg:
        return load_scored_dataset(cfg["scored"])
    train = load_dataset(cfg["data"])
    tune = load_dataset(cfg["tuning"])
    both = Dataset(np.vstack([train.X, tune.X]), np.concatenate([train.T, tune.T]),
                   np.concatenate([train.Y, tune.Y]))
    nuis = fit_nuisances(both, np.arange(train.n, both.n), cfg.get("nuisance_family", "linear-logistic"), seed=seed)
    return compute_scores(train, nuis, ScoreConfig(cfg.get("score_kind", "DR"), float(cfg.get("clip", 0.01))))


def cmd_fit(cfg: dict, seed: int, out: Path) -> None:
    scored = _scored_from_config(cfg, seed)
    plan = ExperimentPlan(**{k: cfg[k] for k in ("esprm_epoch_budget", "esprm_max_epochs", "esprm_batch_size")
                             if k in cfg})
    model = fit_method(cfg.get("method", "erm"), scored, _policy_spec(cfg.get("policy_class", "linear")), seed, plan)
    record = model.to_dict()
    record["score_kind"] = scored.kind
    record["clip_binding"] = scored.clip_binding
    dump_json(record, out / "model.json")


def cmd_eval(cfg: dict, seed: int, out: Path) -> None:
    model = PolicyModel.from_dict(load_json(cfg["model"]))
    if "scenario" in cfg:
        spec = scenario_from_dict(load_json(cfg["scenario"]))
        pv = oracle_policy_value(spec, model, int(cfg.get("mc_size", 1_000_000)), seed=seed)
        result = {"kind": "oracle", "value": pv.value, "se": pv.se, "optimum": pv.optimum,
                  "regret": pv.regret, "regret_se": pv.regret_se}
    else:
        # held-out estimate: mean of pi(X) * psi on scored held-out data
        scored = _scored_from_config(cfg, seed)
        v = model.act(scored.X) * scored.psi
        result = {"kind": "held-out", "score_kind": scored.kind, "value": float(v.mean()),
                  "se": float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else None}
    dump_json(result, out / "eval.json")


def cmd_bench(cfg: dict, seed: int, out: Path, workers: int) -> None:
    plan = ExperimentPlan.from_dict({**cfg, "seed": seed})
    report, rows, seconds = run_experiment(plan, workers=workers)
    write_report(report, rows, plan, out, seconds)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="policylearn", description="Policy learning on simulated or loaded data.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("simulate", "write a synthetic dataset"), ("fit", "fit one method"),
                            ("eval", "evaluate a fitted policy"), ("bench", "run an experiment plan")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON configuration file")
        p.add_argument("--seed", type=int, default=0, help="master seed (non-negative)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--workers", type=int, default=1, help="worker processes (bench only)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed < 0 or args.seed >= 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    if args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        cfg = load_json(args.config)
        if args.command == "simulate":
            cmd_simulate(cfg, args.seed, out)
        elif args.command == "fit":
            cmd_fit(cfg, args.seed, out)
        elif args.command == "eval":
            cmd_eval(cfg, args.seed, out)
        else:
            cmd_bench(cfg, args.seed, out, args.workers)
    except (OSError, KeyError, ValueError, DataFormatError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0
