"""Cardinality estimation and incremental join-cost models.

Four cost models share one interface. Each returns the incremental cost of a
single join given the two input sizes; a full plan's cost is the sum of its
joins' incremental costs (computed in post-order by score_plan).

  CM1   hash join pays the output size; index join pays (expected matches
        per probe tuple) x (probe size), with the match constant lambda.
  CM2   hash-only, memory-aware: output size while both inputs fit in
        memory M, a partitioned-rescan penalty when they spill.
  CM3   CM1 plus hash-table reuse: when the build (right) side's hash table
        is structurally already available, the build cost |O_r| is refunded.
  Cout  output size, operator-agnostic; the classic analytic proxy.

Arithmetic note: expression order is pinned (left-to-right products, sums as
written) because a compiled twin of the enumeration kernel must reproduce
these costs bit-for-bit.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Protocol

import numpy as np

from .querygraph import JoinAction, JoinOperator, Plan, PlanNode, QueryGraph, Vertex

COST_MODEL_KINDS = ("CM1", "CM2", "CM3", "Cout")

# Operator vocabulary per model: index probes are modeled only by CM1/CM3;
# CM2 and Cout reason purely about hash joins.
_OPERATORS: dict[str, tuple[JoinOperator, ...]] = {
    "CM1": (JoinOperator.HASH_JOIN, JoinOperator.INDEX_JOIN),
    "CM2": (JoinOperator.HASH_JOIN,),
    "CM3": (JoinOperator.HASH_JOIN, JoinOperator.INDEX_JOIN),
    "Cout": (JoinOperator.HASH_JOIN,),
}

# Deterministic preference order used to break exact cost ties.
OPERATOR_RANK = {
    JoinOperator.HASH_JOIN: 0,
    JoinOperator.INDEX_JOIN: 1,
    JoinOperator.NESTED_LOOP_JOIN: 2,
}


class IneligibleOperatorError(ValueError):
    """The operator is not usable under this cost model / join shape."""


class HasRows(Protocol):
    estimated_rows: float


InjectedKey = frozenset  # frozenset of two frozensets of relation names


@dataclass(frozen=True)
class CostModelSpec:
    """Which model to use plus its constants.

    injected_costs, when set, overrides the analytic formulas with an
    explicit symmetric (relation-set pair -> cost) table; used to pin
    hand-worked instances in tests and docs.
    """

    kind: str = "Cout"
    index_match_constant: float = 1.0  # lambda
    memory_limit: float = 1e5  # M, in tuples
    injected_costs: Mapping[InjectedKey, float] | None = field(
        default=None, compare=False
    )

    def __post_init__(self) -> None:
        if self.kind not in COST_MODEL_KINDS:
            raise ValueError(f"unknown cost model kind {self.kind!r}")
        if self.index_match_constant <= 0:
            raise ValueError("index_match_constant must be positive")
        if self.memory_limit < 1:
            raise ValueError("memory_limit must be >= 1")

    @property
    def operators(self) -> tuple[JoinOperator, ...]:
        return _OPERATORS[self.kind]

    def to_dict(self) -> dict:
        return {
            "cost_model": self.kind,
            "lambda": self.index_match_constant,
            "memory_limit": self.memory_limit,
        }

    @staticmethod
    def from_dict(obj: dict) -> "CostModelSpec":
        return CostModelSpec(
            kind=obj.get("cost_model", "Cout"),
            index_match_constant=float(obj.get("lambda", 1.0)),
            memory_limit=float(obj.get("memory_limit", 1e5)),
        )


def injected_spec(
    table: Mapping[tuple[Iterable[str], Iterable[str]], float], kind: str = "Cout"
) -> CostModelSpec:
    """Build a spec whose join costs come from an explicit table.

    Keys are unordered pairs of relation-name sets; both orientations of a
    join read the same entry, and the operator is ignored.
    """
    canonical = {
        frozenset((frozenset(left), frozenset(right))): float(cost)
        for (left, right), cost in table.items()
    }
    return CostModelSpec(kind=kind, injected_costs=canonical)


@dataclass
class CostContext:
    """Per-plan-scoring scratch state.

    Records which hash tables a plan has built so far, keyed by (build-side
    relation set, build attribute id); `reuses` counts refunded builds.
    Reset (fresh instance) between plans.
    """

    built_hash_tables: set[tuple[frozenset, int]] = field(default_factory=set)
    reuses: int = 0


def estimate_rows(left: HasRows, right: HasRows, edge_selectivity: float) -> float:
    """|O| = |O_l| * |O_r| * selectivity under independence.

    Single-table predicate selectivities are already folded into leaf row
    estimates, so they never appear here.
    """
    lr = left.estimated_rows
    rr = right.estimated_rows
    if lr <= 0 or rr <= 0:
        raise ValueError("row estimates must be positive")
    if not 0.0 < edge_selectivity <= 1.0:
        raise ValueError(f"selectivity {edge_selectivity} outside (0, 1]")
    return (lr * rr) * edge_selectivity


def join_cost(
    spec: CostModelSpec,
    ctx: CostContext | None,
    op: JoinAction,
    left_node: HasRows,
    right_node: HasRows,
    selectivity: float = 1.0,
    *,
    reusable_build: bool = False,
    build_attribute: int = -1,
) -> float:
    """Incremental cost of one join: the step cost the planner minimizes.

    `selectivity` is the combined selectivity of the edges crossing the
    join. `reusable_build` marks a hash join whose build-side table is
    structurally already available (CM3 only); enumerators derive it from
    the query graph, and a scored Plan carries it per node.
    """
    operator = op.operator
    if operator is JoinOperator.NESTED_LOOP_JOIN:
        raise IneligibleOperatorError("nested-loop joins are not modeled")
    if operator not in spec.operators:
        raise IneligibleOperatorError(
            f"{operator} not available under {spec.kind}"
        )
    if operator is JoinOperator.INDEX_JOIN:
        base = getattr(right_node, "base_relations", None)
        if base is not None and len(base) != 1:
            raise IneligibleOperatorError(
                "index probe side must be a single base relation"
            )

    if spec.injected_costs is not None:
        key = frozenset(
            (
                frozenset(_base_relations(left_node)),
                frozenset(_base_relations(right_node)),
            )
        )
        try:
            return spec.injected_costs[key]
        except KeyError:
            raise KeyError(f"no injected cost for pair {sorted(map(sorted, key))}")

    lr = left_node.estimated_rows
    rr = right_node.estimated_rows
    out = estimate_rows(left_node, right_node, selectivity)

    if spec.kind == "Cout":
        return out

    if spec.kind == "CM2":
        pair_sum = lr + rr
        if pair_sum <= spec.memory_limit:
            return out
        if min(lr, rr) <= spec.memory_limit * spec.memory_limit:
            return (2.0 * pair_sum) + out
        return rr + (math.ceil(rr / spec.memory_limit) * lr)

    # CM1 / CM3
    if operator is JoinOperator.INDEX_JOIN:
        match_per_probe = (spec.index_match_constant * rr) * selectivity
        return match_per_probe * lr

    if spec.kind == "CM3":
        build_key = (frozenset(_base_relations(right_node)), build_attribute)
        if reusable_build or (ctx is not None and build_key in ctx.built_hash_tables):
            if ctx is not None:
                ctx.reuses += 1
            refund = out - rr
            return refund if refund > 0.0 else 0.0
        if ctx is not None:
            ctx.built_hash_tables.add(build_key)
    return out


def _base_relations(node) -> frozenset:
    base = getattr(node, "base_relations", None)
    if base is not None:
        return frozenset(base)
    return frozenset((getattr(node, "id", repr(node)),))


def score_plan(spec: CostModelSpec, plan: Plan) -> float:
    """Total plan cost: sum of incremental join costs in post-order.

    Row estimates are recomputed bottom-up from leaf rows and per-node join
    selectivities, so a deserialized plan scores identically to a freshly
    enumerated one. A fresh CostContext is threaded through each call.
    """
    ctx = CostContext()

    def walk(node: PlanNode) -> tuple[float, float]:  # (rows, cumulative cost)
        if node.is_leaf:
            return node.estimated_rows, 0.0
        left_rows, left_cost = walk(node.left)
        right_rows, right_cost = walk(node.right)
        left_in = _SizedInput(left_rows, node.left.base_relations)
        right_in = _SizedInput(right_rows, node.right.base_relations)
        inc = join_cost(
            spec,
            ctx,
            node.action,
            left_in,
            right_in,
            node.selectivity,
            reusable_build=node.hash_reuse,
        )
        rows = (left_rows * right_rows) * node.selectivity
        return rows, (left_cost + right_cost) + inc

    _, total = walk(plan.root)
    return total


@dataclass(frozen=True)
class _SizedInput:
    estimated_rows: float
    base_relations: frozenset


def structural_reuse(
    initial_g: QueryGraph,
    left_relations: frozenset,
    right_relations: frozenset,
) -> bool:
    """Whether a hash join of these relation sets can reuse a build-side
    hash table.

    True when the build (right) side is composite and some crossing edge's
    right-side attribute already appears as an endpoint attribute of an edge
    internal to the right side: that attribute was hashed while building the
    right input, so its table can be probed again instead of rebuilt.
    Evaluated against the ORIGINAL query edges (initial_g), and depends only
    on (query, split) — never on traversal order — so exact dynamic
    programming remains sound under CM3.
    """
    if len(right_relations) < 2:
        return False
    internal_attrs: set[int] = set()
    for e in initial_g.edges:
        if e.join_attribute_pair == (-1, -1):
            continue
        if e.left in right_relations and e.right in right_relations:
            internal_attrs.update(e.join_attribute_pair)
    if not internal_attrs:
        return False
    for e in initial_g.edges:
        if e.join_attribute_pair == (-1, -1):
            continue
        if e.left in left_relations and e.right in right_relations:
            if e.join_attribute_pair[1] in internal_attrs:
                return True
        elif e.right in left_relations and e.left in right_relations:
            if e.join_attribute_pair[0] in internal_attrs:
                return True
    return False


def eligible_operators(
    spec: CostModelSpec,
    initial_g: QueryGraph,
    catalog=None,
) -> Callable[[Vertex, Vertex], tuple[JoinOperator, ...]]:
    """Operator-eligibility rule for valid_joins, per orientation.

    Hash joins are always available. An index probe into `right` is
    eligible only under CM1/CM3, only when `right` is a single base
    relation, and only when some original join edge crossing the pair has
    its right-side attribute indexed in `catalog` (no catalog: no indexes).
    """
    index_ok = JoinOperator.INDEX_JOIN in spec.operators
    indexed = indexed_attribute_ids(catalog) if catalog is not None else frozenset()
    # original (base) edges with attribute ids, keyed by base endpoint names
    original = [
        e for e in initial_g.edges if e.join_attribute_pair != (-1, -1)
    ]

    def ops(left: Vertex, right: Vertex) -> tuple[JoinOperator, ...]:
        result = [JoinOperator.HASH_JOIN]
        if index_ok and len(right.base_relations) == 1:
            (probe_rel,) = right.base_relations
            for e in original:
                if e.left == probe_rel and e.right in left.base_relations:
                    if e.join_attribute_pair[0] in indexed:
                        result.append(JoinOperator.INDEX_JOIN)
                        break
                elif e.right == probe_rel and e.left in left.base_relations:
                    if e.join_attribute_pair[1] in indexed:
                        result.append(JoinOperator.INDEX_JOIN)
                        break
        return tuple(result)

    return ops


def indexed_attribute_ids(catalog) -> frozenset[int]:
    """Dense ids of every indexed attribute in the catalog."""
    ids = set()
    for rel in catalog.relations:
        for a in rel.attributes:
            if a.name in rel.indexes:
                ids.add(catalog.attribute_id(rel.name, a.name))
    return frozenset(ids)


class PerturbedOracle:
    """A stand-in for real execution feedback: the base model's costs, bent
    by per-operator bias factors and deterministic per-join noise.

    Noise is a lognormal factor derived from (seed, join's relation sets),
    so the same plan always scores the same, while different joins see
    different perturbations.
    """

    def __init__(
        self,
        base_spec: CostModelSpec,
        operator_bias: Mapping[JoinOperator, float] | None = None,
        noise_scale: float = 0.0,
        seed: int = 0,
    ) -> None:
        if base_spec.injected_costs is not None:
            raise ValueError("perturbation of injected tables is not meaningful")
        self.base_spec = base_spec
        self.operator_bias = dict(operator_bias or {})
        self.noise_scale = noise_scale
        self.seed = seed

    def _factor(self, node: PlanNode) -> float:
        bias = self.operator_bias.get(node.action.operator, 1.0)
        if self.noise_scale == 0.0:
            return bias
        key = "|".join(
            (
                ",".join(sorted(node.left.base_relations)),
                ",".join(sorted(node.right.base_relations)),
                node.action.operator.value,
            )
        )
        stream = np.random.default_rng([self.seed, zlib.crc32(key.encode())])
        return bias * float(
            np.exp(self.noise_scale * stream.standard_normal())
        )

    def score_plan(self, plan: Plan) -> float:
        ctx = CostContext()

        def walk(node: PlanNode) -> tuple[float, float]:
            if node.is_leaf:
                return node.estimated_rows, 0.0
            left_rows, left_cost = walk(node.left)
            right_rows, right_cost = walk(node.right)
            inc = join_cost(
                self.base_spec,
                ctx,
                node.action,
                _SizedInput(left_rows, node.left.base_relations),
                _SizedInput(right_rows, node.right.base_relations),
                node.selectivity,
                reusable_build=node.hash_reuse,
            )
            rows = (left_rows * right_rows) * node.selectivity
            return rows, (left_cost + right_cost) + inc * self._factor(node)

        return walk(plan.root)[1]
