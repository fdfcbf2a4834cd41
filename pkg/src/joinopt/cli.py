"""Command-line interface to catalogs, planners, training, and experiments.

Every subcommand prints a machine-readable JSON result to stdout (the `plan`
command prints a human-readable operator tree instead, unless asked for the
featurization breakdown) and exits 0; any failure prints one JSON object
{"error": <type>, "message": <text>} to stderr and exits 1.

Shared flags on every subcommand: --config (experiment configuration file),
--seed (overrides the config's seed), --out (output path or path prefix).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from typing import Sequence

from .catalog import (
    WorkloadConfig,
    gen_catalog,
    initial_graph,
    load_catalog,
    sample_queries,
    save_catalog,
)
from .costmodel import COST_MODEL_KINDS, CostModelSpec, PerturbedOracle
from .enumerators import run_algorithm
from .featurizer import explain
from .harness import (
    ExperimentConfig,
    count_q_evals,
    run_ablation,
    run_benchmark,
    run_memory_sweep,
    run_sensitivity,
    run_variance,
    train_dq,
)
from .qlearner import (
    collect_runtime_tuples,
    finetune,
    load_network,
    plan_with_q,
    save_network,
)
from .querygraph import Plan, PlanNode, apply_join, load_queries, save_plan, save_queries
from .selest import (
    RegressorKind,
    default_schema,
    fit_and_evaluate,
    gen_database,
    gen_predicates,
)

# ---------------------------------------------------------------------------
# Output helpers


def _emit(payload: dict) -> None:
    json.dump(payload, sys.stdout, indent=2)
    sys.stdout.write("\n")


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)


def _write_csv(path: str, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def format_plan(plan: Plan) -> str:
    """Indented operator tree with per-join rows and incremental costs."""
    lines: list[str] = []

    def label(node: PlanNode) -> str:
        if node.is_leaf:
            (name,) = node.base_relations
            return f"{name}  rows={node.estimated_rows:g}"
        return (
            f"{node.action.operator.value}  rows={node.estimated_rows:g}"
            f"  cost=+{node.incremental_cost:g}"
        )

    def walk(node: PlanNode, prefix: str, head: str, child_prefix: str) -> None:
        lines.append(prefix + head + label(node))
        if not node.is_leaf:
            walk(node.left, child_prefix, "|- ", child_prefix + "|  ")
            walk(node.right, child_prefix, "`- ", child_prefix + "   ")

    walk(plan.root, "", "", "")
    lines.append(f"total cost: {plan.total_cost!r}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Shared argument plumbing


def _require(args: argparse.Namespace, flag: str):
    value = getattr(args, flag.lstrip("-").replace("-", "_"))
    if value is None:
        raise ValueError(f"{flag} is required for this command")
    return value


def _experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    path = _require(args, "--config")
    config = ExperimentConfig.from_file(path)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.out is not None:
        config = replace(config, out=args.out)
    return config


def _seed(args: argparse.Namespace, default: int = 0) -> int:
    return default if args.seed is None else args.seed


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


# ---------------------------------------------------------------------------
# Subcommand handlers


def _cmd_gen_catalog(args: argparse.Namespace) -> int:
    out = _require(args, "--out")
    catalog = gen_catalog(
        args.relations,
        args.attrs,
        (args.min_rows, args.max_rows),
        seed=_seed(args),
        fk_probability=args.fk_probability,
    )
    save_catalog(catalog, out)
    _emit(
        {
            "out": out,
            "relations": len(catalog.relations),
            "attributes": catalog.num_attributes,
        }
    )
    return 0


def _cmd_gen_workload(args: argparse.Namespace) -> int:
    out = _require(args, "--out")
    catalog = load_catalog(_require(args, "--catalog"))
    queries = sample_queries(
        catalog,
        WorkloadConfig(
            num_queries=args.queries,
            min_relations=args.min_relations,
            max_relations=args.max_relations,
            predicate_probability=args.predicate_probability,
            seed=_seed(args),
        ),
    )
    save_queries(queries, out)
    _emit({"out": out, "queries": len(queries)})
    return 0


def _pick_query(queries, query_id: str | None):
    if query_id is None:
        return queries[0]
    for q in queries:
        if q.query_id == query_id:
            return q
    raise KeyError(f"query {query_id!r} not found in the workload")


def _cmd_plan(args: argparse.Namespace) -> int:
    catalog = load_catalog(_require(args, "--catalog"))
    queries = load_queries(_require(args, "--workload"))
    query = _pick_query(queries, args.query)
    spec = CostModelSpec(
        kind=args.cost_model,
        index_match_constant=getattr(args, "lambda"),
        memory_limit=args.memory_limit,
    )
    if args.algorithm == "DQ":
        if args.network is None:
            raise ValueError("--network is required to plan with DQ")
        net = load_network(args.network)
        plan = plan_with_q(net, catalog, query, spec)
    else:
        plan = run_algorithm(args.algorithm, catalog, query, spec, seed=_seed(args))
    if args.out:
        save_plan(plan, args.out)
    if args.explain_features:
        g = initial_graph(catalog, query)
        steps = []
        for node in plan.root.iter_postorder():
            if node.is_leaf:
                continue
            steps.append(explain(catalog, query, g, node.action))
            g = apply_join(g, node.action)
        _emit(
            {
                "query": query.query_id,
                "algorithm": args.algorithm,
                "total_cost": plan.total_cost,
                "steps": steps,
            }
        )
    else:
        print(format_plan(plan))
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    out = _require(args, "--out")
    config = _experiment_config(args)
    catalog, queries = config.load()
    net, losses = train_dq(
        catalog, queries, config.spec, config.train_config,
        features=config.features,
    )
    save_network(net, out)
    _emit(
        {
            "out": out,
            "epochs": len(losses),
            "final_loss": losses[-1],
            "n_queries": len(queries),
        }
    )
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    config = _experiment_config(args)
    report = run_benchmark(config)
    _emit(
        {
            "summary": report.summary,
            "failed": report.failed,
            "meta": report.meta,
        }
    )
    return 0


def _cmd_finetune(args: argparse.Namespace) -> int:
    out = _require(args, "--out")
    config = _experiment_config(args)
    net = load_network(_require(args, "--network"))
    catalog, queries = config.load()
    oracle = PerturbedOracle(
        config.spec, noise_scale=args.oracle_noise, seed=config.seed
    )
    tuples = []
    for q in queries:
        tuples.extend(
            collect_runtime_tuples(
                net, catalog, q, config.spec, oracle,
                episodes=args.episodes, epsilon=args.epsilon,
                seed=config.seed, features=config.features,
            )
        )
    tuned = finetune(
        net, catalog, queries, tuples, config.train_config,
        features=config.features,
    )
    save_network(tuned, out)
    _emit(
        {
            "out": out,
            "n_tuples": len(tuples),
            "episodes": args.episodes,
            "epsilon": args.epsilon,
            "oracle_noise": args.oracle_noise,
        }
    )
    return 0


def _cmd_sweep_memory(args: argparse.Namespace) -> int:
    config = _experiment_config(args)
    table = run_memory_sweep(config, _floats(args.m_values))
    _emit(table)
    if config.out:
        _write_json(config.out + ".json", table)
        _write_csv(
            config.out + ".csv",
            ["memory_limit", "algorithm", "mean_relative_cost"],
            [
                [m, algo, table["mean_relative_cost"][algo][i]]
                for i, m in enumerate(table["memory_limit"])
                for algo in table["mean_relative_cost"]
            ],
        )
    return 0


def _cmd_sensitivity(args: argparse.Namespace) -> int:
    config = _experiment_config(args)
    table = run_sensitivity(config, _ints(args.n_values))
    _emit(table)
    if config.out:
        _write_json(config.out + ".json", table)
        _write_csv(
            config.out + ".csv",
            ["n_perturbed", "algorithm", "mean_log_cost"],
            [
                [n, algo, table["mean_log_cost"][algo][i]]
                for i, n in enumerate(table["n_perturbed"])
                for algo in table["mean_log_cost"]
            ],
        )
    return 0


def _cmd_variance(args: argparse.Namespace) -> int:
    config = _experiment_config(args)
    seeds = _ints(args.trial_seeds) if args.trial_seeds else None
    table = run_variance(config, args.trials, trial_seeds=seeds)
    _emit(table)
    if config.out:
        _write_json(config.out + ".json", table)
        _write_csv(
            config.out + ".csv",
            ["algorithm", "max_range"],
            sorted(table["max_range"].items()),
        )
    return 0


def _cmd_ablate(args: argparse.Namespace) -> int:
    config = _experiment_config(args)
    table = run_ablation(config)
    _emit(table)
    if config.out:
        _write_json(config.out + ".json", table)
        _write_csv(
            config.out + ".csv",
            ["variant", "final_loss"],
            sorted(table["final_loss"].items()),
        )
    return 0


def _cmd_q_evals(args: argparse.Namespace) -> int:
    config = _experiment_config(args)
    sizes = _ints(args.sizes) if args.sizes else None
    table = count_q_evals(config, sizes=sizes, queries_per_size=args.queries_per_size)
    _emit(table)
    if config.out:
        _write_json(config.out + ".json", table)
        header = [
            "relations", "query_id", "algorithm", "cost_evals", "q_evals",
            "memo_entries", "wall_seconds",
        ]
        _write_csv(
            config.out + ".csv",
            header,
            [[row[key] for key in header] for row in table["rows"]],
        )
    return 0


def _cmd_selest(args: argparse.Namespace) -> int:
    seed = _seed(args)
    db = gen_database(default_schema(), seed)
    samples = gen_predicates(db, n_train=args.train, n_test=args.test, seed=seed)
    report = fit_and_evaluate(
        db, samples, RegressorKind(args.model), n_buckets=args.buckets
    )
    payload = {
        "model": report.model,
        "train_loss": report.train_mse,
        "test_loss": report.test_mse,
        "n_train": report.n_train,
        "n_test": report.n_test,
        "seed": seed,
    }
    _emit(payload)
    if args.out:
        _write_json(args.out, payload)
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="experiment configuration file (JSON)")
    shared.add_argument(
        "--seed", type=int, default=None,
        help="seed override (defaults to the config's seed, else 0)",
    )
    shared.add_argument("--out", help="output path or path prefix")

    parser = argparse.ArgumentParser(
        prog="joinopt",
        description="Join-order optimization workbench: generators, "
        "planners, learned-planner training, and experiment runners.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser(
        "gen-catalog", parents=[shared], help="generate a synthetic schema"
    )
    p.add_argument("--relations", type=int, default=10)
    p.add_argument("--attrs", type=int, default=4)
    p.add_argument("--min-rows", type=int, default=100)
    p.add_argument("--max-rows", type=int, default=100_000)
    p.add_argument("--fk-probability", type=float, default=0.4)
    p.set_defaults(handler=_cmd_gen_catalog)

    p = sub.add_parser(
        "gen-workload", parents=[shared],
        help="sample connected join queries over a catalog",
    )
    p.add_argument("--catalog", required=True)
    p.add_argument("--queries", type=int, default=20)
    p.add_argument("--min-relations", type=int, default=3)
    p.add_argument("--max-relations", type=int, default=8)
    p.add_argument("--predicate-probability", type=float, default=0.5)
    p.set_defaults(handler=_cmd_gen_workload)

    p = sub.add_parser(
        "plan", parents=[shared],
        help="plan one query with one algorithm and print the join tree",
    )
    p.add_argument("--catalog", required=True)
    p.add_argument("--workload", required=True)
    p.add_argument("--query", help="query id (default: first in the workload)")
    p.add_argument("--algorithm", default="EX")
    p.add_argument("--cost-model", choices=COST_MODEL_KINDS, default="Cout")
    p.add_argument("--lambda", dest="lambda", type=float, default=1.0,
                   help="index-join match constant")
    p.add_argument("--memory-limit", type=float, default=1e5)
    p.add_argument("--network", help="checkpoint for the learned planner")
    p.add_argument(
        "--explain-features", action="store_true",
        help="emit the plan's per-step featurization breakdown as JSON",
    )
    p.set_defaults(handler=_cmd_plan)

    p = sub.add_parser(
        "train", parents=[shared],
        help="train the learned planner on the configured workload",
    )
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser(
        "evaluate", parents=[shared],
        help="benchmark the configured algorithms (costs relative to EX)",
    )
    p.set_defaults(handler=_cmd_evaluate)

    p = sub.add_parser(
        "finetune", parents=[shared],
        help="adapt a trained network to simulated execution feedback",
    )
    p.add_argument("--network", help="input checkpoint", required=False)
    p.add_argument("--oracle-noise", type=float, default=0.25,
                   help="lognormal noise scale of the simulated runtime")
    p.add_argument("--episodes", type=int, default=4)
    p.add_argument("--epsilon", type=float, default=0.25)
    p.set_defaults(handler=_cmd_finetune)

    p = sub.add_parser(
        "sweep-memory", parents=[shared],
        help="mean relative cost per algorithm across memory budgets",
    )
    p.add_argument("--m-values", default="1e18,1e5,1e4,1e3")
    p.set_defaults(handler=_cmd_sweep_memory)

    p = sub.add_parser(
        "sensitivity", parents=[shared],
        help="true-cost robustness to perturbed cardinalities",
    )
    p.add_argument("--n-values", default="0,1,2,4")
    p.set_defaults(handler=_cmd_sensitivity)

    p = sub.add_parser(
        "variance", parents=[shared],
        help="spread of mean relative cost across reseeded trials",
    )
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--trial-seeds", help="comma-separated seed overrides")
    p.set_defaults(handler=_cmd_variance)

    p = sub.add_parser(
        "ablate", parents=[shared],
        help="final training loss with feature segments disabled",
    )
    p.set_defaults(handler=_cmd_ablate)

    p = sub.add_parser(
        "q-evals", parents=[shared],
        help="planning-effort counts per query and algorithm",
    )
    p.add_argument("--sizes", help="comma-separated relation counts to sample")
    p.add_argument("--queries-per-size", type=int, default=3)
    p.set_defaults(handler=_cmd_q_evals)

    p = sub.add_parser(
        "selest", parents=[shared],
        help="fit and score a predicate reduction-factor estimator",
    )
    p.add_argument("--model", choices=[k.value for k in RegressorKind],
                   default="mlp")
    p.add_argument("--train", type=int, default=1000)
    p.add_argument("--test", type=int, default=2000)
    p.add_argument("--buckets", type=int, default=64)
    p.set_defaults(handler=_cmd_selest)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports, not raises
        json.dump(
            {"error": type(exc).__name__, "message": str(exc)}, sys.stderr
        )
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
