"""Experiment harness: configuration, relative-cost reports, and runners.

All experiments work off an ExperimentConfig naming a saved catalog and
workload plus a cost model, an algorithm list, and training hyperparameters.
Runners are deterministic functions of (config, explicit arguments): two
calls with the same inputs produce identical results, including the learned
planner's, whose training is fully seeded.

Costs are reported relative to the exhaustive optimum ("EX"), which is
computed for every query whether or not it is in the algorithm list. The
learned planner ("DQ") is always evaluated out of sample: the workload is
split into cross-validation folds and each query is planned by a network
that never saw it during training.

Planning effort is measured in counts (cost-model evaluations, network
scorings, memo entries), not wall time; wall time is recorded alongside as
an untrusted convenience.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .catalog import (
    Catalog,
    WorkloadConfig,
    cv_splits,
    load_catalog,
    perturb_cardinalities,
    sample_queries,
)
from .costmodel import CostModelSpec
from .enumerators import (
    ALGORITHMS,
    TrainingTuple,
    build_dp_memo,
    run_algorithm,
    _GraphSearch,
    _replay_on,
)
from .featurizer import DEFAULT_CONFIG, FeaturizerConfig, feature_dim
from .qlearner import (
    LabelMode,
    QNetwork,
    TrainConfig,
    collect_candidate_training,
    init_network,
    plan_with_q,
    train,
)
from .querygraph import JoinOperator, Plan, Query, load_queries

#: Every registry name the harness accepts, learned planner included.
DEFAULT_ALGORITHMS: tuple[str, ...] = (
    "EX", "LD", "RD", "ZZ", "IKKBZ", "LDP", "QP-1000", "MinSel", "Greedy", "DQ",
)


def validate_algorithm_name(name: str) -> None:
    """Reject names that run_algorithm (or the DQ planner) cannot dispatch."""
    if name == "DQ" or name in ALGORITHMS:
        return
    if name.startswith("QP-") and name[3:].isdigit():
        return
    raise ValueError(
        f"unknown algorithm {name!r}; expected DQ, QP-<n>, or one of "
        f"{sorted(ALGORITHMS)}"
    )


# ---------------------------------------------------------------------------
# Configuration


def _train_to_dict(tc: TrainConfig) -> dict:
    return {
        "hidden_sizes": list(tc.hidden_sizes),
        "learning_rate": tc.learning_rate,
        "minibatch_size": tc.minibatch_size,
        "epochs": tc.epochs,
        "seed": tc.seed,
        "label_mode": tc.label_mode.value,
    }


def _train_from_dict(obj: Mapping) -> TrainConfig:
    defaults = TrainConfig()
    return TrainConfig(
        hidden_sizes=tuple(obj.get("hidden_sizes", defaults.hidden_sizes)),
        learning_rate=float(obj.get("learning_rate", defaults.learning_rate)),
        minibatch_size=int(obj.get("minibatch_size", defaults.minibatch_size)),
        epochs=int(obj.get("epochs", defaults.epochs)),
        seed=int(obj.get("seed", defaults.seed)),
        label_mode=LabelMode(obj.get("label_mode", defaults.label_mode.value)),
    )


def _features_to_dict(fc: FeaturizerConfig) -> dict:
    return {
        "operators": [op.value for op in fc.operators],
        "include_graph_slots": fc.include_graph_slots,
        "scale_by_selectivity": fc.scale_by_selectivity,
    }


def _features_from_dict(obj: Mapping) -> FeaturizerConfig:
    defaults = DEFAULT_CONFIG
    return FeaturizerConfig(
        operators=tuple(
            JoinOperator(v)
            for v in obj.get("operators", [op.value for op in defaults.operators])
        ),
        include_graph_slots=bool(
            obj.get("include_graph_slots", defaults.include_graph_slots)
        ),
        scale_by_selectivity=bool(
            obj.get("scale_by_selectivity", defaults.scale_by_selectivity)
        ),
    )


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything an experiment needs, with validated file references.

    catalog_path and workload_path must point at existing files written by
    save_catalog / save_queries; algorithm names must come from the planner
    registry ("DQ" and "QP-<n>" included). cv_folds controls the learned
    planner's out-of-sample evaluation. out, when set, is a path prefix the
    benchmark writes `<out>.json` and `<out>.csv` to.
    """

    catalog_path: str
    workload_path: str
    spec: CostModelSpec = CostModelSpec()
    algorithms: tuple[str, ...] = ("EX", "LD", "Greedy")
    cv_folds: int = 4
    train_config: TrainConfig = TrainConfig()
    features: FeaturizerConfig = DEFAULT_CONFIG
    seed: int = 0
    out: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "algorithms", tuple(self.algorithms))
        for path, label in (
            (self.catalog_path, "catalog"),
            (self.workload_path, "workload"),
        ):
            if not os.path.isfile(path):
                raise ValueError(f"{label} file does not exist: {path!r}")
        if not self.algorithms:
            raise ValueError("algorithm list must not be empty")
        for name in self.algorithms:
            validate_algorithm_name(name)
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be at least 2")

    def load(self) -> tuple[Catalog, list[Query]]:
        """Materialize the referenced catalog and workload."""
        return load_catalog(self.catalog_path), load_queries(self.workload_path)

    def to_dict(self) -> dict:
        return {
            "catalog": self.catalog_path,
            "workload": self.workload_path,
            "spec": self.spec.to_dict(),
            "algorithms": list(self.algorithms),
            "cv_folds": self.cv_folds,
            "train": _train_to_dict(self.train_config),
            "features": _features_to_dict(self.features),
            "seed": self.seed,
            "out": self.out,
        }

    @staticmethod
    def from_dict(obj: Mapping) -> "ExperimentConfig":
        return ExperimentConfig(
            catalog_path=obj["catalog"],
            workload_path=obj["workload"],
            spec=CostModelSpec.from_dict(obj.get("spec", {})),
            algorithms=tuple(obj.get("algorithms", ("EX", "LD", "Greedy"))),
            cv_folds=int(obj.get("cv_folds", 4)),
            train_config=_train_from_dict(obj.get("train", {})),
            features=_features_from_dict(obj.get("features", {})),
            seed=int(obj.get("seed", 0)),
            out=obj.get("out"),
        )

    @staticmethod
    def from_file(path: str) -> "ExperimentConfig":
        with open(path) as fh:
            return ExperimentConfig.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Relative-cost reports


def summarize_ratios(
    per_query: Mapping[str, Mapping[str, float]],
) -> dict[str, dict[str, float]]:
    """Per-algorithm {min, mean, max, count} over the per-query ratios."""
    values: dict[str, list[float]] = {}
    for ratios in per_query.values():
        for algo, ratio in ratios.items():
            values.setdefault(algo, []).append(ratio)
    return {
        algo: {
            "min": min(vals),
            "mean": sum(vals) / len(vals),
            "max": max(vals),
            "count": len(vals),
        }
        for algo, vals in sorted(values.items())
    }


@dataclass(frozen=True)
class RelativeCostReport:
    """Per-query plan costs relative to the exhaustive optimum.

    per_query maps query id -> algorithm -> (cost / exhaustive cost);
    summary holds {min, mean, max, count} per algorithm; failed records the
    queries an algorithm could not plan, as "ErrorType: message" strings.
    Ratios below one (beyond float noise) and an exhaustive column that is
    not identically one are construction errors.
    """

    per_query: dict[str, dict[str, float]]
    summary: dict[str, dict[str, float]]
    failed: dict[str, dict[str, str]]
    meta: dict

    def __post_init__(self) -> None:
        for qid, ratios in self.per_query.items():
            for algo, ratio in ratios.items():
                if ratio < 1.0 - 1e-9:
                    raise ValueError(
                        f"{algo} beats the exhaustive optimum on {qid!r} "
                        f"({ratio}); relative costs cannot drop below one"
                    )
            if ratios.get("EX", 1.0) != 1.0:
                raise ValueError(
                    f"exhaustive baseline must be identically 1.0, got "
                    f"{ratios['EX']} on {qid!r}"
                )

    def to_dict(self) -> dict:
        return {
            "per_query": self.per_query,
            "summary": self.summary,
            "failed": self.failed,
            "meta": self.meta,
        }

    def write_json(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["query_id", "algorithm", "relative_cost"])
            for qid, ratios in self.per_query.items():
                for algo in sorted(ratios):
                    writer.writerow([qid, algo, repr(ratios[algo])])


# ---------------------------------------------------------------------------
# Workload planning shared by the runners


def _failure(exc: Exception) -> str:
    return f"{type(exc).__name__}: {exc}"


def _collect_corpus(
    catalog: Catalog, queries: Sequence[Query], spec: CostModelSpec
) -> list[TrainingTuple]:
    """Exact candidate labels over every collectable query.

    Queries whose trajectories cannot be labeled (disconnected, or too many
    relations for the completion DP) are skipped: they contribute no
    observations but do not abort the corpus.
    """
    tuples: list[TrainingTuple] = []
    for q in queries:
        try:
            tuples.extend(collect_candidate_training(catalog, q, spec))
        except ValueError:
            continue
    return tuples


def train_dq(
    catalog: Catalog,
    queries: Sequence[Query],
    spec: CostModelSpec,
    train_config: TrainConfig,
    *,
    features: FeaturizerConfig = DEFAULT_CONFIG,
) -> tuple[QNetwork, list[float]]:
    """Fit a fresh network to the training queries' exact candidate labels.

    Returns (network, per-epoch losses). Raises EmptyDatasetError when no
    query yields observations.
    """
    queries = list(queries)
    tuples = _collect_corpus(catalog, queries, spec)
    net = init_network(feature_dim(catalog, len(features.operators)), train_config)
    return train(
        net, catalog, queries, tuples, train_config, spec=spec, features=features
    )


def _plan_workload(
    config: ExperimentConfig, catalog: Catalog, queries: Sequence[Query]
) -> tuple[dict[str, dict[str, Plan]], dict[str, dict[str, str]]]:
    """Plan every query with every configured algorithm.

    Classical planners run directly; the learned planner is trained per
    cross-validation fold and plans only its fold's held-out queries.
    Failures are recorded per (query, algorithm) instead of aborting.
    """
    plans: dict[str, dict[str, Plan]] = {q.query_id: {} for q in queries}
    failed: dict[str, dict[str, str]] = {}
    classical = [name for name in config.algorithms if name != "DQ"]
    for q in queries:
        for name in classical:
            try:
                plans[q.query_id][name] = run_algorithm(
                    name, catalog, q, config.spec, seed=config.seed
                )
            except Exception as exc:
                failed.setdefault(q.query_id, {})[name] = _failure(exc)

    if "DQ" in config.algorithms:
        for train_qs, test_qs in cv_splits(queries, config.cv_folds, config.seed):
            try:
                net, _ = train_dq(
                    catalog, train_qs, config.spec, config.train_config,
                    features=config.features,
                )
            except Exception as exc:
                for q in test_qs:
                    failed.setdefault(q.query_id, {})["DQ"] = _failure(exc)
                continue
            for q in test_qs:
                try:
                    plans[q.query_id]["DQ"] = plan_with_q(
                        net, catalog, q, config.spec, features=config.features
                    )
                except Exception as exc:
                    failed.setdefault(q.query_id, {})["DQ"] = _failure(exc)
    return plans, failed


def _exhaustive_cost(
    config: ExperimentConfig,
    catalog: Catalog,
    q: Query,
    qplans: Mapping[str, Plan],
) -> float | None:
    if "EX" in qplans:
        return qplans["EX"].total_cost
    if "EX" in config.algorithms:
        return None  # listed but failed; already recorded
    return run_algorithm("EX", catalog, q, config.spec).total_cost


def run_benchmark(config: ExperimentConfig) -> RelativeCostReport:
    """Plan the workload and report costs relative to the exhaustive optimum.

    The optimum is computed for every query even when "EX" is not in the
    algorithm list (it is the denominator either way). Queries where the
    exhaustive planner itself fails appear only under `failed`. Writes
    `<out>.json` and `<out>.csv` when the config names an output prefix.
    """
    catalog, queries = config.load()
    plans, failed = _plan_workload(config, catalog, queries)
    per_query: dict[str, dict[str, float]] = {}
    for q in queries:
        qplans = plans[q.query_id]
        try:
            ex_cost = _exhaustive_cost(config, catalog, q, qplans)
        except Exception as exc:
            failed.setdefault(q.query_id, {})["EX"] = _failure(exc)
            continue
        if ex_cost is None:
            continue
        ratios = {
            name: 1.0 if qplans[name].total_cost == ex_cost
            else qplans[name].total_cost / ex_cost
            for name in config.algorithms
            if name in qplans
        }
        if ratios:
            per_query[q.query_id] = ratios

    report = RelativeCostReport(
        per_query=per_query,
        summary=summarize_ratios(per_query),
        failed=failed,
        meta={
            "catalog": config.catalog_path,
            "workload": config.workload_path,
            "spec": config.spec.to_dict(),
            "algorithms": list(config.algorithms),
            "cv_folds": config.cv_folds,
            "seed": config.seed,
            "n_queries": len(queries),
        },
    )
    if config.out:
        report.write_json(config.out + ".json")
        report.write_csv(config.out + ".csv")
    return report


# ---------------------------------------------------------------------------
# Rescoring plans under the true statistics


def rescore_plan(
    catalog: Catalog, query: Query, spec: CostModelSpec, plan: Plan
) -> float:
    """Cost of a plan's join order under this catalog's statistics.

    The plan's joins are replayed bottom-up against a fresh graph built from
    `catalog`, so a plan produced under perturbed statistics is priced as the
    given catalog would price it. On the catalog the plan was produced from,
    this reproduces plan.total_cost exactly.
    """
    search = _GraphSearch(catalog, query, spec)
    actions = [n.action for n in plan.root.iter_postorder() if not n.is_leaf]
    return _replay_on(search, search.g0, actions).total_cost


# ---------------------------------------------------------------------------
# Secondary experiments


def run_data_efficiency(
    config: ExperimentConfig, training_sizes: Sequence[int]
) -> dict:
    """Mean relative cost on held-out queries as training data grows.

    For each size n the shuffled workload is split into (first n, rest); the
    learned planner trains on the first part and every non-exhaustive
    algorithm is scored on the holdout. Requires "DQ" in the algorithm list;
    "QP-1000" is added as a constant baseline row when not already listed.
    """
    if "DQ" not in config.algorithms:
        raise ValueError("data-efficiency curves need 'DQ' among the algorithms")
    catalog, queries = config.load()
    columns = [name for name in config.algorithms if name != "EX"]
    if not any(name.startswith("QP") for name in columns):
        columns.append("QP-1000")
    table: dict = {"n_train": [], "n_holdout": []}
    results: dict[str, list[float]] = {name: [] for name in columns}
    for n_train in training_sizes:
        ((train_qs, holdout),) = cv_splits(
            queries, 2, config.seed, n_train=int(n_train)
        )
        net, _ = train_dq(
            catalog, train_qs, config.spec, config.train_config,
            features=config.features,
        )
        ratios: dict[str, list[float]] = {name: [] for name in columns}
        for q in holdout:
            ex_cost = run_algorithm("EX", catalog, q, config.spec).total_cost
            for name in columns:
                if name == "DQ":
                    cost = plan_with_q(
                        net, catalog, q, config.spec, features=config.features
                    ).total_cost
                else:
                    cost = run_algorithm(
                        name, catalog, q, config.spec, seed=config.seed
                    ).total_cost
                ratios[name].append(1.0 if cost == ex_cost else cost / ex_cost)
        table["n_train"].append(int(n_train))
        table["n_holdout"].append(len(holdout))
        for name in columns:
            results[name].append(float(np.mean(ratios[name])))
    table.update(results)
    return table


def run_memory_sweep(config: ExperimentConfig, m_values: Sequence[float]) -> dict:
    """Mean relative cost per algorithm as the memory budget shrinks.

    Only the memory-aware cost model reads the budget, so the config must
    use it. Each budget gets a full benchmark run (the optimum moves with
    the budget too).
    """
    if config.spec.kind != "CM2":
        raise ValueError(
            "the memory sweep varies the budget M, which only the "
            "memory-aware cost model (CM2) reads"
        )
    means: dict[str, list[float]] = {name: [] for name in config.algorithms}
    for m in m_values:
        sub = replace(
            config, spec=replace(config.spec, memory_limit=float(m)), out=None
        )
        report = run_benchmark(sub)
        for name in config.algorithms:
            means[name].append(report.summary[name]["mean"])
    return {
        "memory_limit": [float(m) for m in m_values],
        "mean_relative_cost": means,
        "meta": {
            "algorithms": list(config.algorithms),
            "n_queries": len(config.load()[1]),
            "seed": config.seed,
        },
    }


def run_sensitivity(config: ExperimentConfig, n_values: Sequence[int]) -> dict:
    """Robustness to cardinality misestimation.

    For each N, a copy of the catalog with N relations' cardinalities scaled
    up is handed to the planners (the learned planner retrains on it, since
    its labels come from the misestimated costs); the resulting join orders
    are then priced under the true catalog. Reported per algorithm as the
    mean of log10(1 + true cost) over the workload. N = 0 plans on the true
    catalog.
    """
    catalog, queries = config.load()
    means: dict[str, list[float]] = {name: [] for name in config.algorithms}
    for n in n_values:
        n = int(n)
        planning_catalog = (
            catalog if n == 0 else perturb_cardinalities(catalog, n, config.seed + n)
        )
        plans, failed = _plan_workload(config, planning_catalog, queries)
        if failed:
            raise RuntimeError(f"sensitivity run could not plan: {failed}")
        for name in config.algorithms:
            logs = [
                math.log10(
                    1.0 + rescore_plan(catalog, q, config.spec, plans[q.query_id][name])
                )
                for q in queries
            ]
            means[name].append(float(np.mean(logs)))
    return {
        "n_perturbed": [int(n) for n in n_values],
        "mean_log_cost": means,
        "meta": {
            "algorithms": list(config.algorithms),
            "n_queries": len(queries),
            "seed": config.seed,
        },
    }


def run_variance(
    config: ExperimentConfig,
    n_trials: int,
    trial_seeds: Sequence[int] | None = None,
) -> dict:
    """Spread of each algorithm's mean relative cost across reseeded runs.

    Each trial reruns the whole benchmark with the trial's seed driving both
    the randomized planners and the learned planner's splits, initialization,
    and optimizer. Deterministic planners show a range of exactly zero.
    """
    if trial_seeds is None:
        seeds = list(range(n_trials))
    else:
        seeds = [int(s) for s in trial_seeds]
        if len(seeds) != n_trials:
            raise ValueError("trial_seeds length must equal n_trials")
    per_trial: dict[str, list[float]] = {name: [] for name in config.algorithms}
    for s in seeds:
        sub = replace(
            config,
            seed=s,
            train_config=replace(config.train_config, seed=s),
            out=None,
        )
        report = run_benchmark(sub)
        for name in config.algorithms:
            per_trial[name].append(report.summary[name]["mean"])
    return {
        "n_trials": n_trials,
        "trial_seeds": seeds,
        "mean_relative_cost": per_trial,
        "max_range": {
            name: max(vals) - min(vals) for name, vals in per_trial.items()
        },
    }


def run_ablation(config: ExperimentConfig) -> dict:
    """Final training loss with feature segments disabled one at a time.

    The same observations, network layout, and seed are used for every
    variant; only the featurization switches change, so loss differences
    isolate what the removed segment contributes.
    """
    catalog, queries = config.load()
    tuples = _collect_corpus(catalog, queries, config.spec)
    base = config.features
    variants = {
        "full": replace(
            base, include_graph_slots=True, scale_by_selectivity=True
        ),
        "no_graph_slots": replace(
            base, include_graph_slots=False, scale_by_selectivity=True
        ),
        "no_selectivity_scaling": replace(
            base, include_graph_slots=True, scale_by_selectivity=False
        ),
    }
    dim = feature_dim(catalog, len(base.operators))
    curves: dict[str, list[float]] = {}
    for name, feats in variants.items():
        net = init_network(dim, config.train_config)
        _, losses = train(
            net, catalog, queries, tuples, config.train_config,
            spec=config.spec, features=feats,
        )
        curves[name] = losses
    return {
        "final_loss": {name: losses[-1] for name, losses in curves.items()},
        "loss_curves": curves,
        "n_tuples": len(tuples),
        "n_queries": len(queries),
    }


def count_q_evals(
    config: ExperimentConfig,
    sizes: Sequence[int] | None = None,
    queries_per_size: int = 3,
) -> dict:
    """Planning-effort counts per (query, algorithm).

    Rows carry cost-model evaluations, network scorings (learned planner
    only), and — for the exhaustive planner — the number of memo entries its
    dynamic program filled. With `sizes` given, fresh workloads of exactly
    those relation counts are sampled from the catalog instead of using the
    configured workload. The learned planner runs with a freshly initialized
    network: effort depends on candidate counts, not parameter values.
    """
    catalog, queries = config.load()
    if sizes is not None:
        queries = []
        for i, n in enumerate(sizes):
            sampled = sample_queries(
                catalog,
                WorkloadConfig(
                    num_queries=queries_per_size,
                    min_relations=int(n),
                    max_relations=int(n),
                    seed=config.seed + i + 1,
                ),
            )
            queries.extend(
                replace(q, query_id=f"n{n}_{q.query_id}") for q in sampled
            )
    net = None
    if "DQ" in config.algorithms:
        dim = feature_dim(catalog, len(config.features.operators))
        net = init_network(dim, config.train_config)
    rows: list[dict] = []
    for q in queries:
        for name in config.algorithms:
            stats: dict = {}
            start = time.perf_counter()
            if name == "DQ":
                plan_with_q(
                    net, catalog, q, config.spec,
                    features=config.features, stats=stats,
                )
            else:
                run_algorithm(
                    name, catalog, q, config.spec, seed=config.seed, stats=stats
                )
            elapsed = time.perf_counter() - start
            memo_entries = (
                len(build_dp_memo(catalog, q, config.spec))
                if name == "EX"
                else None
            )
            rows.append(
                {
                    "relations": len(q.relations),
                    "query_id": q.query_id,
                    "algorithm": name,
                    "cost_evals": int(stats.get("cost_evals", 0)),
                    "q_evals": int(stats.get("q_evals", 0)),
                    "memo_entries": memo_entries,
                    "wall_seconds": elapsed,
                }
            )
    return {
        "rows": rows,
        "meta": {
            "algorithms": list(config.algorithms),
            "spec": config.spec.to_dict(),
            "seed": config.seed,
        },
    }
