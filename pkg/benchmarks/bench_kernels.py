"""Benchmark the compiled subset-DP kernel against its pure-Python twin.

Both backends walk identical enumeration orders and pinned arithmetic, so
they return bitwise-identical tables; this script measures what the
compiled extension buys in wall time. Run it from the repository root:

    python3 benchmarks/bench_kernels.py [--max-relations N] [--repeats K]
"""

from __future__ import annotations

import argparse
import statistics
import time

from joinopt._core import KERNEL_BACKEND, solve, solve_python
from joinopt._core.problem import SHAPE_EX, build_problem
from joinopt.catalog import WorkloadConfig, gen_catalog, sample_queries
from joinopt.costmodel import CostModelSpec


def _time(fn, *args, repeats: int) -> float:
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        samples.append(time.perf_counter() - start)
    return statistics.median(samples)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--max-relations", type=int, default=14)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    if KERNEL_BACKEND != "compiled":
        print(
            "warning: compiled kernel unavailable; 'fast' below is the "
            "pure-Python fallback"
        )

    catalog = gen_catalog(
        n_relations=max(args.max_relations, 8),
        attrs_per_relation=4,
        row_range=(100, 100_000),
        seed=7,
    )

    sizes = [s for s in (8, 10, 12, 14, 16) if s <= args.max_relations]
    print(f"backend: {KERNEL_BACKEND}")
    print(f"{'relations':>9}  {'model':>5}  {'python':>10}  {'compiled':>10}  {'speedup':>8}")
    for n_rel in sizes:
        config = WorkloadConfig(
            num_queries=1, min_relations=n_rel, max_relations=n_rel, seed=n_rel
        )
        query = sample_queries(catalog, config)[0]
        for kind in ("CM1", "CM2", "CM3", "Cout"):
            spec = CostModelSpec(kind=kind)
            problem = build_problem(catalog, query, spec)

            fast = solve(problem, SHAPE_EX, False)
            slow = solve_python(problem, SHAPE_EX, False)
            assert fast.best_cost == slow.best_cost, "backends disagree"
            assert fast.evals == slow.evals, "backends disagree on evals"

            t_fast = _time(solve, problem, SHAPE_EX, False, repeats=args.repeats)
            t_slow = _time(
                solve_python, problem, SHAPE_EX, False, repeats=args.repeats
            )
            print(
                f"{n_rel:>9}  {kind:>5}  {t_slow:>9.4f}s  {t_fast:>9.4f}s  "
                f"{t_slow / t_fast:>7.1f}x"
            )


if __name__ == "__main__":
    main()
