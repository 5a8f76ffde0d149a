"""Command-line interface: validate | exact | train | equiv.

Exit codes: 0 success, 1 assertion/equivalence/validation failure,
2 usage or precondition error. Outputs are written only after the
computation succeeds, so failures leave no partial files.
"""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import (
    ConfigError,
    RunManifest,
    build_env_from_config,
    load_json,
    make_scheme,
    metrics_to_csv,
    train_config_from_dict,
)
from .envs import EnvLimitError
from .graph import SoftMdpGraph, validate_dag
from .metrics import jsd, pearson_logprob_return
from .objectives import EquivalencePair, check_equivalence
from .oracles import gibbs_target, optimal_policy, soft_value_iteration, terminating_distribution
from .rewards import RewardKind
from .training import train

BIAS_THRESHOLD = 1e-9


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, EnvLimitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gibbsflow",
        description="Exact analyses, training and equivalence certification "
        "for Gibbs sampling policies on DAG MDPs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_val = sub.add_parser("validate", help="validate a graph JSON file")
    p_val.add_argument("--graph", required=True, help="path to a graph JSON file")
    p_val.add_argument("--json", action="store_true", help="print the report as JSON")
    p_val.set_defaults(func=cmd_validate)

    p_exact = sub.add_parser(
        "exact", help="exact optimal-policy distribution vs the Gibbs target"
    )
    _add_env_args(p_exact)
    _add_scheme_args(p_exact)
    p_exact.add_argument("--out", required=True, help="output directory")
    p_exact.set_defaults(func=cmd_exact)

    p_train = sub.add_parser("train", help="train tabular parameters")
    p_train.add_argument("--config", required=True, help="experiment config JSON")
    p_train.add_argument("--out", default=None, help="output directory (overrides config)")
    p_train.add_argument("--objective", default=None)
    p_train.add_argument("--reward", default=None)
    p_train.add_argument("--backward", default=None)
    p_train.add_argument("--alpha", type=float, default=None)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument(
        "--seeds", default=None, help="comma-separated seeds to fan out (e.g. 0,1,2)"
    )
    p_train.add_argument("--jobs", type=int, default=1, help="worker threads for --seeds")
    p_train.set_defaults(func=cmd_train)

    p_eq = sub.add_parser("equiv", help="certify a residual-equivalence pair")
    p_eq.add_argument(
        "--pair", required=True, choices=["pcl_subtb", "sql_db", "pisql_mdb", "sql_fldb"]
    )
    _add_env_args(p_eq)
    p_eq.add_argument("--reward", default="auto", help="reward kind or 'auto' for the pair's")
    p_eq.add_argument("--backward", default="uniform", choices=["uniform", "counting"])
    p_eq.add_argument("--alpha", type=float, default=1.0)
    p_eq.add_argument("--trials", type=int, default=100)
    p_eq.add_argument("--tol", type=float, default=1e-9)
    p_eq.add_argument("--seed", type=int, default=0)
    p_eq.add_argument("--out", default=None, help="also write the JSON report here")
    p_eq.set_defaults(func=cmd_equiv)
    return parser


def _add_env_args(p: argparse.ArgumentParser) -> None:
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--env", help="environment config JSON")
    group.add_argument("--config", help="experiment config JSON holding an 'env' entry")


def _add_scheme_args(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--reward", default="terminal", choices=[k.value for k in RewardKind]
    )
    p.add_argument("--backward", default="uniform", choices=["uniform", "counting"])
    p.add_argument("--alpha", type=float, default=1.0)


def _load_env(args) -> tuple:
    if args.env:
        cfg = load_json(args.env)
        base = Path(args.env).parent
    else:
        experiment = load_json(args.config)
        if "env" not in experiment:
            raise ConfigError("experiment config has no 'env' entry")
        cfg = experiment["env"]
        base = Path(args.config).parent
    return build_env_from_config(cfg, base_dir=base)


def cmd_validate(args) -> int:
    spec = load_json(args.graph)
    try:
        graph = SoftMdpGraph.from_json_dict(spec)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad graph object: {exc}") from exc
    report = validate_dag(graph)
    if args.json:
        print(json.dumps({
            "is_valid": report.is_valid,
            "violations": [
                {"kind": v.kind, "subject": v.subject} for v in report.violations
            ],
        }))
    else:
        if report.is_valid:
            print(f"valid: {graph.num_states} states, "
                  f"{sum(len(c) for c in graph.children)} edges, "
                  f"{len(graph.terminating_states())} terminating")
        else:
            for v in report.violations:
                print(f"violation: {v.kind} ({v.subject})")
    return 0 if report.is_valid else 1


def cmd_exact(args) -> int:
    graph, energy, env_echo = _load_env(args)
    report = validate_dag(graph)
    if not report.is_valid:
        raise ConfigError(f"invalid graph: {sorted(report.kinds())}")
    scheme = make_scheme(graph, energy, args.reward, args.backward, args.alpha)
    manifest = RunManifest.start("exact", {
        "env": env_echo,
        "reward": {"kind": args.reward, "backward": args.backward, "alpha": args.alpha},
    })

    values = soft_value_iteration(graph, scheme)
    policy = optimal_policy(values)
    dist = terminating_distribution(graph, policy)
    target = gibbs_target(energy, scheme.alpha)
    divergence = jsd(dist, target)
    log_z_policy = float(values.v[graph.initial_state] / scheme.alpha)
    try:
        pearson = pearson_logprob_return(
            np.log(np.maximum(dist.probs, 1e-300)), -energy.terminal_vector()
        )
    except ValueError:
        pearson = float("nan")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["state,label,energy,policy_prob,gibbs_prob"]
    for x, p, g in zip(dist.states, dist.probs, target.probs):
        lines.append(f"{x},{graph.label(x)},{energy.terminal_energy(x)!r},{p!r},{g!r}")
    (out / "distribution.csv").write_text("\n".join(lines) + "\n")
    summary = {
        "jsd": divergence,
        "log_z_policy": float(log_z_policy),
        "log_z_gibbs": float(target.log_z),
        "pearson_logprob_return": pearson,
        "biased": bool(divergence > BIAS_THRESHOLD),
        "num_terminating_states": len(dist.states),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    manifest.finish(["distribution.csv", "summary.json"]).write(out / "manifest.json")
    print(f"jsd={divergence!r} log_z_policy={log_z_policy!r} "
          f"log_z_gibbs={target.log_z!r} biased={summary['biased']}")
    return 0


def cmd_train(args) -> int:
    experiment = load_json(args.config)
    if "train" not in experiment:
        raise ConfigError("experiment config has no 'train' entry")
    graph, energy, env_echo = build_env_from_config(
        experiment.get("env", {}), base_dir=Path(args.config).parent
    )
    report = validate_dag(graph)
    if not report.is_valid:
        raise ConfigError(f"invalid graph: {sorted(report.kinds())}")

    reward_cfg = dict(experiment.get("reward", {}))
    if args.reward:
        reward_cfg["kind"] = args.reward
    if args.backward:
        reward_cfg["backward"] = args.backward
    if args.alpha is not None:
        reward_cfg["alpha"] = args.alpha

    cfg = train_config_from_dict(
        experiment["train"],
        objective=args.objective,
        alpha=reward_cfg.get("alpha"),
        seed=args.seed,
    )
    out_root = Path(args.out or experiment.get("output_dir", "out"))

    seeds = [cfg.seed]
    if args.seeds:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]

    def run_one(seed: int) -> tuple[int, bool]:
        run_cfg = replace(cfg, seed=seed)
        scheme = make_scheme(
            graph, energy,
            reward_cfg.get("kind", "terminal"),
            reward_cfg.get("backward", "uniform"),
            run_cfg.alpha,
        )
        out = out_root / f"seed_{seed}" if len(seeds) > 1 else out_root
        manifest = RunManifest.start("train", {
            "env": env_echo,
            "reward": {
                "kind": scheme.kind.value,
                "backward": reward_cfg.get("backward", "uniform"),
                "alpha": run_cfg.alpha,
            },
            "train": run_cfg.to_json_dict(),
        })
        result = train(graph, scheme, run_cfg)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(metrics_to_csv(result.metrics))
        (out / "params.json").write_text(
            json.dumps(result.params.to_json_dict()) + "\n"
        )
        manifest_dict = manifest.finish(["metrics.csv", "params.json"])
        if result.aborted:
            manifest_dict.config["aborted"] = result.abort_reason
        manifest_dict.write(out / "manifest.json")
        status = "aborted" if result.aborted else "done"
        if result.metrics:
            print(f"seed {seed}: {status}; final jsd={result.metrics[-1].jsd!r}")
        else:
            print(f"seed {seed}: {status}")
        return seed, result.aborted

    if len(seeds) > 1 and args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(run_one, seeds))
    else:
        results = [run_one(s) for s in seeds]
    return 0 if not any(aborted for _, aborted in results) else 1


def cmd_equiv(args) -> int:
    graph, energy, env_echo = _load_env(args)
    pair = EquivalencePair.by_name(args.pair)
    reward = pair.required_kind.value if args.reward == "auto" else args.reward
    scheme = make_scheme(graph, energy, reward, args.backward, args.alpha)
    report = check_equivalence(
        pair, graph, scheme, trials=args.trials, tol=args.tol, seed=args.seed
    )
    payload = report.to_json_dict()
    payload["env"] = env_echo
    payload["reward"] = reward
    payload["backward"] = args.backward
    text = json.dumps(payload, indent=2) + "\n"
    print(text, end="")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
