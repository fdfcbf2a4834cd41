"""Shared fixtures: seeded synthetic catalogs and workloads."""

from __future__ import annotations

import pytest

from joinopt.catalog import (
    Catalog,
    WorkloadConfig,
    gen_catalog,
    sample_queries,
)
from joinopt.costmodel import CostModelSpec

ALL_KINDS = ("CM1", "CM2", "CM3", "Cout")


def make_workload(
    n_relations: int = 10,
    n_queries: int = 20,
    min_relations: int = 2,
    max_relations: int = 6,
    catalog_seed: int = 2,
    workload_seed: int = 4,
    row_range: tuple[int, int] = (100, 10_000),
):
    catalog = gen_catalog(n_relations, 4, row_range, seed=catalog_seed)
    config = WorkloadConfig(
        num_queries=n_queries,
        min_relations=min_relations,
        max_relations=max_relations,
        seed=workload_seed,
    )
    return catalog, sample_queries(catalog, config)


@pytest.fixture(scope="session")
def small_workload():
    """Catalog plus 20 connected queries of 2-6 relations."""
    return make_workload()


@pytest.fixture(scope="session")
def midsize_workload():
    """Catalog plus 12 connected queries of 4-8 relations."""
    return make_workload(
        n_relations=12, n_queries=12, min_relations=4, max_relations=8,
        catalog_seed=5, workload_seed=6,
    )


@pytest.fixture(params=ALL_KINDS)
def any_spec(request) -> CostModelSpec:
    return CostModelSpec(kind=request.param)
