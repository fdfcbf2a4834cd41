"""Join-order search strategies over the contraction game.

Exact dynamic programs (bushy and shape-restricted), polynomial heuristics
(greedy, minimum selectivity, IK-KBZ and its DP hybrid), randomized search
(QuickPick), and the trace collector that turns optimal subplans into
training data for the learned planner.

Analytic cost models run on the subset-DP kernels in _core; specs with an
injected cost table (and completions over already-merged vertices) run on a
graph-level subset DP with identical semantics and tie-breaking.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from ._core import (
    KERNEL_BACKEND,
    OP_HASH,
    OP_INDEX,
    SHAPE_EX,
    SHAPE_LD,
    SHAPE_RD,
    SHAPE_ZZ,
    KernelResult,
    Problem,
    build_problem,
    cross_selectivity,
    inc_cost,
    solve,
)
from .catalog import Catalog, initial_graph
from .costmodel import (
    OPERATOR_RANK,
    CostModelSpec,
    eligible_operators,
    join_cost,
    structural_reuse,
)
from .querygraph import (
    JoinAction,
    JoinOperator,
    Plan,
    PlanNode,
    Query,
    QueryGraph,
    Vertex,
    apply_join,
    connected_components,
    graph_from_dict,
    graph_to_dict,
    leaf_node,
    merged_vertex_id,
)

INF = float("inf")

_OP_FROM_ID = {OP_HASH: JoinOperator.HASH_JOIN, OP_INDEX: JoinOperator.INDEX_JOIN}


class DisconnectedGraphError(ValueError):
    """A planner that forbids Cartesian products was given a query whose
    join graph is not connected."""


# ---------------------------------------------------------------------------
# Shared helpers


def _note(stats: dict | None, **fields) -> None:
    if stats is not None:
        stats.update(fields)


def _single_relation_plan(g0: QueryGraph, query_id: str) -> Plan:
    (vid,) = g0.vertices
    return Plan(
        root=leaf_node(vid, g0.vertex(vid).estimated_rows),
        total_cost=0.0,
        query_id=query_id,
    )


def _require_connected(g0: QueryGraph, allow_cartesian: bool = False) -> None:
    if not allow_cartesian and connected_components(g0) > 1:
        raise DisconnectedGraphError(
            f"query {g0.query_id!r} has a disconnected join graph; "
            "planning without Cartesian products is impossible"
        )


def _cumulative_cost(node: PlanNode) -> float:
    """Total cost of a subtree, accumulated exactly like the DP:
    (left + right) + incremental."""
    if node.is_leaf:
        return 0.0
    return (
        _cumulative_cost(node.left) + _cumulative_cost(node.right)
    ) + node.incremental_cost


def _reuse_flag(
    spec: CostModelSpec, g0: QueryGraph, left: Vertex, right: Vertex,
    operator: JoinOperator,
) -> bool:
    """Whether this hash join's build side is structurally reusable."""
    return (
        spec.injected_costs is None
        and spec.kind == "CM3"
        and operator is JoinOperator.HASH_JOIN
        and structural_reuse(g0, left.base_relations, right.base_relations)
    )


class _GraphSearch:
    """Cost evaluation for planners that walk the query graph directly."""

    def __init__(self, catalog: Catalog, query: Query, spec: CostModelSpec):
        self.g0 = initial_graph(catalog, query)
        self.spec = spec
        self.ops_for = eligible_operators(spec, self.g0, catalog)
        self.evals = 0

    def action_cost(
        self, g: QueryGraph, action: JoinAction
    ) -> tuple[float, float, bool]:
        """(incremental cost, crossing selectivity, reuse flag) of one action."""
        left = g.vertex(action.left)
        right = g.vertex(action.right)
        sel = g.pair_selectivity(action.left, action.right)
        reuse = _reuse_flag(self.spec, self.g0, left, right, action.operator)
        inc = join_cost(
            self.spec, None, action, left, right, sel, reusable_build=reuse
        )
        self.evals += 1
        return inc, sel, reuse


def _oriented_candidates(
    g: QueryGraph,
    ops_for: Callable[[Vertex, Vertex], Iterable[JoinOperator]],
    allow_cartesian: bool = False,
) -> list[JoinAction]:
    """Every (left, right, operator) candidate, both orientations per pair.

    Unlike valid_joins (one action per edge for orientation-symmetric
    operators), planners evaluate both orientations of every pair: build
    and probe sides matter to the memory-aware and reuse cost models.
    """
    ids = g.vertex_ids()
    out: list[JoinAction] = []
    for i, u in enumerate(ids):
        for v in ids[i + 1 :]:
            if not (g.adjacent(u, v) or allow_cartesian):
                continue
            for a, b in ((u, v), (v, u)):
                for op in ops_for(g.vertices[a], g.vertices[b]):
                    out.append(JoinAction(a, b, op))
    return out


def _candidate_key(
    g: QueryGraph, action: JoinAction, cost: float
) -> tuple[float, tuple[str, ...], int, tuple[str, ...]]:
    """Deterministic preference order: cost, left child's canonical relation
    key, operator rank, right child's key."""
    return (
        cost,
        tuple(sorted(g.vertex(action.left).base_relations)),
        OPERATOR_RANK[action.operator],
        tuple(sorted(g.vertex(action.right).base_relations)),
    )


def _greedy_action(
    search: _GraphSearch, g: QueryGraph
) -> tuple[JoinAction, float, float, bool]:
    """The cheapest single action of g under the search's spec."""
    best_key = None
    best = None
    for action in _oriented_candidates(g, search.ops_for):
        inc, sel, reuse = search.action_cost(g, action)
        key = _candidate_key(g, action, inc)
        if best_key is None or key < best_key:
            best_key = key
            best = (action, inc, sel, reuse)
    if best is None:
        raise DisconnectedGraphError(
            f"no joinable pair left in {g.query_id!r}; graph is disconnected"
        )
    return best


class _PlanBuilder:
    """Folds a contraction sequence into a Plan tree."""

    def __init__(self, g0: QueryGraph):
        self.g = g0
        self.nodes: dict[str, PlanNode] = {
            vid: leaf_node(vid, v.estimated_rows) for vid, v in g0.vertices.items()
        }

    def apply(self, action: JoinAction, inc: float, sel: float, reuse: bool) -> None:
        left = self.nodes.pop(action.left)
        right = self.nodes.pop(action.right)
        self.g = apply_join(self.g, action)
        merged_id = merged_vertex_id(left.base_relations | right.base_relations)
        self.nodes[merged_id] = PlanNode(
            base_relations=left.base_relations | right.base_relations,
            estimated_rows=self.g.vertex(merged_id).estimated_rows,
            action=action,
            left=left,
            right=right,
            incremental_cost=inc,
            selectivity=sel,
            hash_reuse=reuse,
        )

    def finish(self, query_id: str) -> Plan:
        (root,) = self.nodes.values()
        return Plan(
            root=root, total_cost=_cumulative_cost(root), query_id=query_id
        )


def _replay(
    search: _GraphSearch, actions: Sequence[JoinAction], query_id: str
) -> Plan:
    """Build the Plan for a known-good action sequence (bookkeeping only:
    the cost evaluations were already counted when the sequence was found)."""
    evals_before = search.evals
    builder = _PlanBuilder(search.g0)
    for action in actions:
        inc, sel, reuse = search.action_cost(builder.g, action)
        builder.apply(action, inc, sel, reuse)
    search.evals = evals_before
    return builder.finish(search.g0.query_id if not query_id else query_id)


# ---------------------------------------------------------------------------
# Kernel-backed exact DPs (analytic cost models)


def _mask_vertex_id(p: Problem, mask: int) -> str:
    return merged_vertex_id(p.names[i] for i in range(p.n) if mask & (1 << i))


def _plan_node_from_kernel(
    p: Problem,
    res: KernelResult,
    mask: int,
    cache: dict[int, PlanNode],
) -> PlanNode:
    hit = cache.get(mask)
    if hit is not None:
        return hit
    if mask & (mask - 1) == 0:
        i = mask.bit_length() - 1
        node = leaf_node(p.names[i], float(res.rows[mask]))
    else:
        a = int(res.best_left[mask])
        b = mask ^ a
        left = _plan_node_from_kernel(p, res, a, cache)
        right = _plan_node_from_kernel(p, res, b, cache)
        op_id = int(res.best_op[mask])
        reuse = bool(res.best_reuse[mask])
        sel = cross_selectivity(p, a, b)
        inc = inc_cost(
            p,
            float(res.rows[a]),
            float(res.rows[b]),
            float(res.rows[mask]),
            sel,
            op_id,
            reuse,
        )
        node = PlanNode(
            base_relations=left.base_relations | right.base_relations,
            estimated_rows=float(res.rows[mask]),
            action=JoinAction(
                _mask_vertex_id(p, a), _mask_vertex_id(p, b), _OP_FROM_ID[op_id]
            ),
            left=left,
            right=right,
            incremental_cost=inc,
            selectivity=sel,
            hash_reuse=reuse,
        )
    cache[mask] = node
    return node


def _kernel_actions(p: Problem, res: KernelResult, mask: int) -> list[JoinAction]:
    """Postorder contraction sequence of the optimal subplan for mask."""
    out: list[JoinAction] = []

    def walk(m: int) -> None:
        if m & (m - 1) == 0:
            return
        a = int(res.best_left[m])
        b = m ^ a
        walk(a)
        walk(b)
        out.append(
            JoinAction(
                _mask_vertex_id(p, a),
                _mask_vertex_id(p, b),
                _OP_FROM_ID[int(res.best_op[m])],
            )
        )

    walk(mask)
    return out


def _kernel_plan(
    catalog: Catalog,
    query: Query,
    spec: CostModelSpec,
    shape: int,
    allow_cartesian: bool,
    stats: dict | None,
    adjacency_pairs: list[tuple[str, str]] | None = None,
) -> Plan:
    g0 = initial_graph(catalog, query)
    if len(query.relations) == 1:
        _note(stats, cost_evals=0, backend=KERNEL_BACKEND)
        return _single_relation_plan(g0, query.query_id)
    _require_connected(g0, allow_cartesian)
    p = build_problem(catalog, query, spec, adjacency_pairs)
    res = solve(p, shape, allow_cartesian)
    if res.best_cost[p.full_mask] == INF:
        raise DisconnectedGraphError(
            f"query {query.query_id!r} is not solvable under the restricted "
            "adjacency"
        )
    root = _plan_node_from_kernel(p, res, p.full_mask, {})
    _note(stats, cost_evals=res.evals, backend=KERNEL_BACKEND)
    return Plan(
        root=root, total_cost=_cumulative_cost(root), query_id=query.query_id
    )


# ---------------------------------------------------------------------------
# Graph-level subset DP (injected cost tables; completions over merged
# vertices). Same enumeration, arithmetic shape, and tie-breaking as the
# kernels, with vertices of the current graph as the atomic units.


@dataclass
class _SideView:
    """Duck-typed stand-in for a Vertex covering a vertex subset."""

    estimated_rows: float
    base_relations: frozenset


@dataclass
class _SubsetTable:
    ids: list[str]  # bit position -> vertex id (id-sorted)
    best: list[float]
    best_left: list[int]
    best_op: list[int]
    best_reuse: list[int]
    rows: list[float]
    bases: list[frozenset]
    evals: int

    @property
    def full_mask(self) -> int:
        return (1 << len(self.ids)) - 1


def _graph_subset_dp(
    g: QueryGraph,
    g0: QueryGraph,
    spec: CostModelSpec,
    ops_for: Callable[..., Iterable[JoinOperator]],
    shape: int = SHAPE_EX,
    allow_cartesian: bool = False,
    adjacency_pairs: list[tuple[str, str]] | None = None,
) -> _SubsetTable:
    ids = g.vertex_ids()
    n = len(ids)
    if n > 16:
        raise ValueError(
            f"graph-level subset DP limited to 16 vertices, got {n}"
        )
    bit = {vid: i for i, vid in enumerate(ids)}
    size = 1 << n

    edges = [
        (1 << bit[e.left], 1 << bit[e.right], e.selectivity) for e in g.edges
    ]
    if adjacency_pairs is None:
        adj = [0] * n
        for ub, vb, _ in edges:
            adj[ub.bit_length() - 1] |= vb
            adj[vb.bit_length() - 1] |= ub
    else:
        adj = [0] * n
        for u, v in adjacency_pairs:
            adj[bit[u]] |= 1 << bit[v]
            adj[bit[v]] |= 1 << bit[u]

    # rows per subset: peel the lowest bit, crossing-edge selectivities in
    # edge order (same scheme as the kernel's canonical row table)
    rows = [0.0] * size
    bases: list[frozenset] = [frozenset()] * size
    for vid, i in bit.items():
        rows[1 << i] = g.vertex(vid).estimated_rows
        bases[1 << i] = g.vertex(vid).base_relations
    for mask in range(3, size):
        if mask & (mask - 1) == 0:
            continue
        low = mask & (-mask)
        rest = mask ^ low
        acc = rows[low] * rows[rest]
        for ub, vb, s in edges:
            if (ub == low and (vb & rest)) or (vb == low and (ub & rest)):
                acc *= s
        rows[mask] = acc
        bases[mask] = bases[low] | bases[rest]

    connected = [False] * size
    for i in range(n):
        connected[1 << i] = True
    for mask in range(3, size):
        if mask & (mask - 1) == 0:
            continue
        start = mask & (-mask)
        seen = start
        frontier = start
        while frontier:
            vb = frontier & (-frontier)
            frontier ^= vb
            grow = adj[vb.bit_length() - 1] & mask & ~seen
            seen |= grow
            frontier |= grow
        connected[mask] = seen == mask

    names_key = [tuple(sorted(b)) for b in bases]
    best = [INF] * size
    best_left = [0] * size
    best_op = [-1] * size
    best_reuse = [0] * size
    for i in range(n):
        best[1 << i] = 0.0
    evals = 0
    reuse_wanted = spec.injected_costs is None and spec.kind == "CM3"

    for mask in range(3, size):
        if mask & (mask - 1) == 0:
            continue
        if not allow_cartesian and not connected[mask]:
            continue
        bc = INF
        bl = 0
        bo = -1
        br = 0
        sub = (mask - 1) & mask
        while sub:
            a = sub
            b = mask ^ sub
            if shape == SHAPE_LD:
                ok = (b & (b - 1)) == 0
            elif shape == SHAPE_RD:
                ok = (a & (a - 1)) == 0
            elif shape == SHAPE_ZZ:
                ok = ((a & (a - 1)) == 0) or ((b & (b - 1)) == 0)
            else:
                ok = True
            if ok and best[a] < INF and best[b] < INF:
                left = _SideView(rows[a], bases[a])
                right = _SideView(rows[b], bases[b])
                sel = 1.0
                for ub, vb, s in edges:
                    if ((ub & a) and (vb & b)) or ((ub & b) and (vb & a)):
                        sel *= s
                part = best[a] + best[b]
                for op in ops_for(left, right):
                    reuse = (
                        reuse_wanted
                        and op is JoinOperator.HASH_JOIN
                        and len(right.base_relations) > 1
                        and structural_reuse(
                            g0, left.base_relations, right.base_relations
                        )
                    )
                    inc = join_cost(
                        spec,
                        None,
                        JoinAction("", "", op),
                        left,
                        right,
                        sel,
                        reusable_build=reuse,
                    )
                    evals += 1
                    cand = part + inc
                    rank = OPERATOR_RANK[op]
                    if cand < bc or (
                        cand == bc
                        and (
                            names_key[a] < names_key[bl]
                            or (a == bl and rank < bo)
                        )
                    ):
                        bc = cand
                        bl = a
                        bo = rank
                        br = 1 if reuse else 0
            sub = (sub - 1) & mask
        best[mask] = bc
        best_left[mask] = bl
        best_op[mask] = bo
        best_reuse[mask] = br

    return _SubsetTable(
        ids=ids,
        best=best,
        best_left=best_left,
        best_op=best_op,
        best_reuse=best_reuse,
        rows=rows,
        bases=bases,
        evals=evals,
    )


def _table_vertex_id(tbl: _SubsetTable, mask: int) -> str:
    base: frozenset = frozenset()
    for i in range(len(tbl.ids)):
        if mask & (1 << i):
            base = base | tbl.bases[1 << i]
    return merged_vertex_id(base)


def _table_actions(tbl: _SubsetTable, mask: int) -> list[JoinAction]:
    """Postorder contraction sequence for the table's optimal subplan."""
    out: list[JoinAction] = []

    def walk(m: int) -> None:
        if m & (m - 1) == 0:
            return
        a = tbl.best_left[m]
        b = m ^ a
        walk(a)
        walk(b)
        out.append(
            JoinAction(
                _table_vertex_id(tbl, a),
                _table_vertex_id(tbl, b),
                _OP_FROM_ID[tbl.best_op[m]],
            )
        )

    walk(mask)
    return out


def _graph_dp_plan(
    catalog: Catalog,
    query: Query,
    spec: CostModelSpec,
    shape: int,
    allow_cartesian: bool,
    stats: dict | None,
    adjacency_pairs: list[tuple[str, str]] | None = None,
) -> Plan:
    search = _GraphSearch(catalog, query, spec)
    if len(query.relations) == 1:
        _note(stats, cost_evals=0, backend="graph")
        return _single_relation_plan(search.g0, query.query_id)
    _require_connected(search.g0, allow_cartesian)
    tbl = _graph_subset_dp(
        search.g0,
        search.g0,
        spec,
        search.ops_for,
        shape,
        allow_cartesian,
        adjacency_pairs,
    )
    if tbl.best[tbl.full_mask] == INF:
        raise DisconnectedGraphError(
            f"query {query.query_id!r} is not solvable under the restricted "
            "adjacency"
        )
    plan = _replay(search, _table_actions(tbl, tbl.full_mask), query.query_id)
    _note(stats, cost_evals=tbl.evals, backend="graph")
    return plan


def _shape_dp(
    catalog: Catalog,
    query: Query,
    spec: CostModelSpec,
    shape: int,
    allow_cartesian: bool,
    stats: dict | None,
) -> Plan:
    if spec.injected_costs is not None:
        return _graph_dp_plan(catalog, query, spec, shape, allow_cartesian, stats)
    return _kernel_plan(catalog, query, spec, shape, allow_cartesian, stats)


def exhaustive_dp(
    catalog: Catalog,
    query: Query,
    spec: CostModelSpec,
    allow_cartesian: bool = False,
    *,
    stats: dict | None = None,
) -> Plan:
    """Cost-optimal bushy plan by dynamic programming over relation subsets.

    Optimal for every memoized subset, not just the full query. Ties break
    on the left child's canonical relation key, then operator rank.
    """
    return _shape_dp(catalog, query, spec, SHAPE_EX, allow_cartesian, stats)


def leftdeep_dp(
    catalog: Catalog,
    query: Query,
    spec: CostModelSpec,
    allow_cartesian: bool = False,
    *,
    stats: dict | None = None,
) -> Plan:
    """Optimal plan whose every join probes a base relation on the right."""
    return _shape_dp(catalog, query, spec, SHAPE_LD, allow_cartesian, stats)


def rightdeep_dp(
    catalog: Catalog,
    query: Query,
    spec: CostModelSpec,
    allow_cartesian: bool = False,
    *,
    stats: dict | None = None,
) -> Plan:
    """Optimal plan whose every join has a base relation on the left."""
    return _shape_dp(catalog, query, spec, SHAPE_RD, allow_cartesian, stats)


def zigzag_dp(
    catalog: Catalog,
    query: Query,
    spec: CostModelSpec,
    allow_cartesian: bool = False,
    *,
    stats: dict | None = None,
) -> Plan:
    """Optimal plan with at least one base relation input per join."""
    return _shape_dp(catalog, query, spec, SHAPE_ZZ, allow_cartesian, stats)


# ---------------------------------------------------------------------------
# DpMemo


@dataclass
class DpMemo:
    """Optimal plan and cost per canonical relation-subset key."""

    entries: dict[tuple[str, ...], tuple[Plan, float]]

    def __len__(self) -> int:
        return len(self.entries)

    def cost(self, relations: Iterable[str]) -> float:
        return self.entries[tuple(sorted(relations))][1]

    def plan(self, relations: Iterable[str]) -> Plan:
        return self.entries[tuple(sorted(relations))][0]


def build_dp_memo(
    catalog: Catalog,
    query: Query,
    spec: CostModelSpec,
    allow_cartesian: bool = False,
) -> DpMemo:
    """The exhaustive DP's full memo: every solvable relation subset with
    its optimal subplan and cost (singletons included, at cost zero)."""
    g0 = initial_graph(catalog, query)
    _require_connected(g0, allow_cartesian)
    entries: dict[tuple[str, ...], tuple[Plan, float]] = {}
    if spec.injected_costs is None and len(query.relations) > 1:
        p = build_problem(catalog, query, spec)
        res = solve(p, SHAPE_EX, allow_cartesian)
        cache: dict[int, PlanNode] = {}
        for mask in range(1, p.full_mask + 1):
            if res.best_cost[mask] == INF:
                continue
            node = _plan_node_from_kernel(p, res, mask, cache)
            key = tuple(sorted(p.names[i] for i in range(p.n) if mask & (1 << i)))
            entries[key] = (
                Plan(node, _cumulative_cost(node), query.query_id),
                float(res.best_cost[mask]),
            )
    else:
        search = _GraphSearch(catalog, query, spec)
        tbl = _graph_subset_dp(
            search.g0, search.g0, spec, search.ops_for,
            allow_cartesian=allow_cartesian,
        )
        for mask in range(1, tbl.full_mask + 1):
            if tbl.best[mask] == INF:
                continue
            sub = _induced_subgraph(search.g0, set(tbl.bases[mask]))
            plan = _replay_on(search, sub, _table_actions(tbl, mask))
            entries[tuple(sorted(tbl.bases[mask]))] = (plan, tbl.best[mask])
    return DpMemo(entries)


def _replay_on(
    search: _GraphSearch, g_start: QueryGraph, actions: Sequence[JoinAction]
) -> Plan:
    builder = _PlanBuilder(g_start)
    for action in actions:
        inc, sel, reuse = search.action_cost(builder.g, action)
        builder.apply(action, inc, sel, reuse)
    return builder.finish(g_start.query_id)


# ---------------------------------------------------------------------------
# Heuristics


def greedy(
    catalog: Catalog,
    query: Query,
    spec: CostModelSpec,
    *,
    stats: dict | None = None,
) -> Plan:
    """Repeatedly take the single cheapest join of the current graph.

    Every orientation and eligible operator of every adjacent pair is
    costed at every step (cubically many evaluations in the number of
    relations)."""
    search = _GraphSearch(catalog, query, spec)
    if len(query.relations) == 1:
        _note(stats, cost_evals=0, backend="graph")
        return _single_relation_plan(search.g0, query.query_id)
    _require_connected(search.g0)
    builder = _PlanBuilder(search.g0)
    while len(builder.g.vertices) > 1:
        action, inc, sel, reuse = _greedy_action(search, builder.g)
        builder.apply(action, inc, sel, reuse)
    _note(stats, cost_evals=search.evals, backend="graph")
    return builder.finish(query.query_id)


def minsel(
    catalog: Catalog,
    query: Query,
    spec: CostModelSpec,
    *,
    stats: dict | None = None,
) -> Plan:
    """Join the pair connected by the most selective edge first.

    Edge ties break on smaller estimated output, then endpoint order; the
    orientation and operator of the chosen pair are then the cheapest by
    incremental cost."""
    search = _GraphSearch(catalog, query, spec)
    if len(query.relations) == 1:
        _note(stats, cost_evals=0, backend="graph")
        return _single_relation_plan(search.g0, query.query_id)
    _require_connected(search.g0)
    builder = _PlanBuilder(search.g0)
    while len(builder.g.vertices) > 1:
        g = builder.g
        best_edge = None
        best_edge_key = None
        for e in g.edges:
            lv = g.vertex(e.left)
            rv = g.vertex(e.right)
            out_rows = (
                lv.estimated_rows * rv.estimated_rows
            ) * g.pair_selectivity(e.left, e.right)
            key = (e.selectivity, out_rows, e.left, e.right)
            if best_edge_key is None or key < best_edge_key:
                best_edge_key = key
                best_edge = e
        best = None
        best_key = None
        for a, b in (
            (best_edge.left, best_edge.right),
            (best_edge.right, best_edge.left),
        ):
            for op in search.ops_for(g.vertices[a], g.vertices[b]):
                action = JoinAction(a, b, op)
                inc, sel, reuse = search.action_cost(g, action)
                key = _candidate_key(g, action, inc)
                if best_key is None or key < best_key:
                    best_key = key
                    best = (action, inc, sel, reuse)
        builder.apply(*best)
    _note(stats, cost_evals=search.evals, backend="graph")
    return builder.finish(query.query_id)


def quickpick(
    catalog: Catalog,
    query: Query,
    spec: CostModelSpec,
    n_samples: int = 1000,
    seed: int = 0,
    *,
    stats: dict | None = None,
) -> Plan:
    """Best of n uniformly sampled join sequences.

    Each step samples an edge, an orientation, and an eligible operator
    uniformly; a partial sequence already costlier than the incumbent is
    abandoned early. Deterministic per seed."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    search = _GraphSearch(catalog, query, spec)
    if len(query.relations) == 1:
        _note(stats, cost_evals=0, backend="graph")
        return _single_relation_plan(search.g0, query.query_id)
    _require_connected(search.g0)
    rng = np.random.default_rng([seed, _stable_id(query.query_id)])
    incumbent = INF
    incumbent_actions: list[JoinAction] | None = None
    pruned = 0
    for _ in range(n_samples):
        g = search.g0
        total = 0.0
        actions: list[JoinAction] = []
        abandoned = False
        while len(g.vertices) > 1:
            action = _sample_action(g, rng, search.ops_for)
            inc, _, _ = search.action_cost(g, action)
            total += inc
            actions.append(action)
            if total >= incumbent:
                abandoned = True
                pruned += 1
                break
            g = apply_join(g, action)
        if not abandoned and total < incumbent:
            incumbent = total
            incumbent_actions = actions
    plan = _replay(search, incumbent_actions, query.query_id)
    _note(
        stats,
        cost_evals=search.evals,
        backend="graph",
        samples=n_samples,
        pruned_samples=pruned,
    )
    return plan


def _sample_action(
    g: QueryGraph,
    rng: np.random.Generator,
    ops_for: Callable[[Vertex, Vertex], Iterable[JoinOperator]],
) -> JoinAction:
    """Uniform random valid action: edge, then orientation, then operator."""
    edges = g.edges
    e = edges[int(rng.integers(len(edges)))]
    if int(rng.integers(2)) == 0:
        a, b = e.left, e.right
    else:
        a, b = e.right, e.left
    ops = tuple(ops_for(g.vertices[a], g.vertices[b]))
    return JoinAction(a, b, ops[int(rng.integers(len(ops)))])


def _stable_id(text: str) -> int:
    return zlib.crc32(text.encode("utf-8"))


# ---------------------------------------------------------------------------
# IK-KBZ and its DP hybrid


def _spanning_tree_pairs(g0: QueryGraph) -> list[tuple[str, str]]:
    """Minimum-selectivity spanning tree over the join graph (Kruskal;
    cycles drop their least selective edges). Acyclic graphs pass through
    unchanged."""
    pairs = sorted({(e.left, e.right) for e in g0.edges})
    ranked = sorted((g0.pair_selectivity(u, v), u, v) for u, v in pairs)
    parent: dict[str, str] = {vid: vid for vid in g0.vertices}

    def find(x: str) -> str:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    chosen: list[tuple[str, str]] = []
    for _, u, v in ranked:
        ru, rv = find(u), find(v)
        if ru != rv:
            parent[ru] = rv
            chosen.append((u, v))
    return sorted(chosen)


def _kbz_order(
    root: str,
    adjacency: dict[str, list[str]],
    rows: dict[str, float],
    tree_sel: dict[frozenset, float],
) -> list[str]:
    """Relation order for one root by rank-based chain merging.

    Each non-root relation contributes multiplier t = rows * selectivity of
    its tree edge to the parent; segments merge whenever a predecessor's
    rank (t - 1) / c exceeds its successor's, which restores a provably
    optimal order within the tree (the classic adjacent-sequence
    interchange argument)."""
    Segment = tuple[float, float, tuple[str, ...]]

    def rank(seg: Segment) -> float:
        return (seg[0] - 1.0) / seg[1]

    def merge(s1: Segment, s2: Segment) -> Segment:
        return (s1[0] * s2[0], s1[1] + s1[0] * s2[1], s1[2] + s2[2])

    def normalize(segs: list[Segment]) -> list[Segment]:
        out: list[Segment] = []
        for seg in segs:
            out.append(seg)
            while len(out) >= 2 and rank(out[-2]) > rank(out[-1]):
                hi = out.pop()
                lo = out.pop()
                out.append(merge(lo, hi))
        return out

    def linearize(v: str, parent: str | None) -> list[Segment]:
        chains = [
            linearize(c, v) for c in sorted(adjacency[v]) if c != parent
        ]
        merged: list[Segment] = []
        cursors = [0] * len(chains)
        while True:
            pick = -1
            pick_key = None
            for i, chain in enumerate(chains):
                if cursors[i] >= len(chain):
                    continue
                seg = chain[cursors[i]]
                key = (rank(seg), seg[2])
                if pick_key is None or key < pick_key:
                    pick_key = key
                    pick = i
            if pick < 0:
                break
            merged.append(chains[pick][cursors[pick]])
            cursors[pick] += 1
        t = rows[v] * (tree_sel[frozenset((v, parent))] if parent else 1.0)
        return normalize([(t, t, (v,))] + merged)

    order: list[str] = []
    for seg in linearize(root, None):
        order.extend(seg[2])
    return order


def _leftdeep_order_plan(
    search: _GraphSearch, order: Sequence[str]
) -> tuple[Plan, float]:
    """Cost a fixed left-to-right relation order as a left-deep plan,
    choosing the cheapest eligible operator at each step."""
    builder = _PlanBuilder(search.g0)
    composite = order[0]
    for nxt in order[1:]:
        g = builder.g
        best = None
        best_key = None
        for op in search.ops_for(g.vertices[composite], g.vertices[nxt]):
            action = JoinAction(composite, nxt, op)
            inc, sel, reuse = search.action_cost(g, action)
            key = (inc, OPERATOR_RANK[op])
            if best_key is None or key < best_key:
                best_key = key
                best = (action, inc, sel, reuse)
        builder.apply(*best)
        for vid in builder.g.vertices:
            if nxt in builder.g.vertex(vid).base_relations:
                composite = vid
                break
    plan = builder.finish(search.g0.query_id)
    return plan, plan.total_cost


def ikkbz(
    catalog: Catalog,
    query: Query,
    spec: CostModelSpec,
    *,
    stats: dict | None = None,
) -> Plan:
    """Polynomial left-deep planner by rank-ordered chain merging.

    Cyclic join graphs are first reduced to their minimum-selectivity
    spanning tree; each relation is tried as the leading one and the
    cheapest resulting plan (under the actual cost model, over the full
    edge set) wins."""
    search = _GraphSearch(catalog, query, spec)
    if len(query.relations) == 1:
        _note(stats, cost_evals=0, backend="graph")
        return _single_relation_plan(search.g0, query.query_id)
    _require_connected(search.g0)
    g0 = search.g0
    tree_pairs = _spanning_tree_pairs(g0)
    adjacency: dict[str, list[str]] = {vid: [] for vid in g0.vertices}
    tree_sel: dict[frozenset, float] = {}
    for u, v in tree_pairs:
        adjacency[u].append(v)
        adjacency[v].append(u)
        tree_sel[frozenset((u, v))] = g0.pair_selectivity(u, v)
    rows = {vid: vx.estimated_rows for vid, vx in g0.vertices.items()}

    best_plan = None
    best_key = None
    for root in sorted(g0.vertices):
        order = _kbz_order(root, adjacency, rows, tree_sel)
        plan, total = _leftdeep_order_plan(search, order)
        key = (total, tuple(order))
        if best_key is None or key < best_key:
            best_key = key
            best_plan = plan
    _note(stats, cost_evals=search.evals, backend="graph")
    return best_plan


def ldp(
    catalog: Catalog,
    query: Query,
    spec: CostModelSpec,
    *,
    stats: dict | None = None,
) -> Plan:
    """Left-deep DP over the minimum-selectivity spanning tree.

    The chain decomposition restricts which pairs count as adjacent during
    enumeration; row estimates and costs still use every original edge, so
    the result is a valid (possibly suboptimal) left-deep plan on cyclic
    graphs and matches leftdeep_dp on acyclic ones."""
    g0 = initial_graph(catalog, query)
    if len(query.relations) == 1:
        _note(stats, cost_evals=0, backend=KERNEL_BACKEND)
        return _single_relation_plan(g0, query.query_id)
    _require_connected(g0)
    tree_pairs = _spanning_tree_pairs(g0)
    if spec.injected_costs is not None:
        return _graph_dp_plan(
            catalog, query, spec, SHAPE_LD, False, stats, tree_pairs
        )
    return _kernel_plan(
        catalog, query, spec, SHAPE_LD, False, stats, tree_pairs
    )


# ---------------------------------------------------------------------------
# Training-data collection


@dataclass(frozen=True)
class TrainingTuple:
    """One observed contraction: state, action, successor, step cost, and
    the cumulative cost of the covering plan (from that plan's initial
    state to termination). Optimal traces carry the DP optimum; exploration
    traces carry the cost actually observed."""

    graph_before: QueryGraph
    action: JoinAction
    graph_after: QueryGraph
    incremental_cost: float
    long_term_cost: float | None = None


def training_to_dict(t: TrainingTuple) -> dict:
    return {
        "graph_before": graph_to_dict(t.graph_before),
        "action": {
            "left": t.action.left,
            "right": t.action.right,
            "operator": t.action.operator.value,
        },
        "graph_after": graph_to_dict(t.graph_after),
        "incremental_cost": t.incremental_cost,
        "long_term_cost": t.long_term_cost,
    }


def training_from_dict(obj: dict) -> TrainingTuple:
    ltc = obj.get("long_term_cost")
    return TrainingTuple(
        graph_before=graph_from_dict(obj["graph_before"]),
        action=JoinAction(
            left=obj["action"]["left"],
            right=obj["action"]["right"],
            operator=JoinOperator(obj["action"]["operator"]),
        ),
        graph_after=graph_from_dict(obj["graph_after"]),
        incremental_cost=float(obj["incremental_cost"]),
        long_term_cost=None if ltc is None else float(ltc),
    )


def save_training(tuples: Iterable[TrainingTuple], path: str) -> None:
    with open(path, "w") as fh:
        for t in tuples:
            fh.write(json.dumps(training_to_dict(t)) + "\n")


def load_training(path: str) -> list[TrainingTuple]:
    out: list[TrainingTuple] = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(training_from_dict(json.loads(line)))
    return out


def _induced_subgraph(g0: QueryGraph, relations: set[str]) -> QueryGraph:
    return QueryGraph(
        vertices={vid: v for vid, v in g0.vertices.items() if vid in relations},
        edges=tuple(
            e
            for e in g0.edges
            if e.left in relations and e.right in relations
        ),
        query_id=g0.query_id,
    )


def _trace_tuples(
    search: _GraphSearch,
    g_start: QueryGraph,
    actions: Sequence[JoinAction],
    label: float,
) -> list[TrainingTuple]:
    """Replay a contraction sequence, emitting one tuple per step, all
    labeled with the covering plan's cumulative cost."""
    out: list[TrainingTuple] = []
    g = g_start
    for action in actions:
        inc, _, _ = search.action_cost(g, action)
        g_next = apply_join(g, action)
        out.append(TrainingTuple(g, action, g_next, inc, label))
        g = g_next
    return out


def _memo_traces(
    catalog: Catalog, query: Query, spec: CostModelSpec, search: _GraphSearch
) -> list[tuple[tuple[str, ...], list[JoinAction], float]]:
    """(subset key, optimal contraction sequence, optimal cost) for every
    connected relation subset of size >= 2, smallest subsets first."""
    out: list[tuple[tuple[str, ...], list[JoinAction], float]] = []
    if spec.injected_costs is None:
        p = build_problem(catalog, query, spec)
        res = solve(p, SHAPE_EX, False)
        for mask in range(3, p.full_mask + 1):
            if mask & (mask - 1) == 0 or res.best_cost[mask] == INF:
                continue
            key = tuple(
                sorted(p.names[i] for i in range(p.n) if mask & (1 << i))
            )
            out.append(
                (key, _kernel_actions(p, res, mask), float(res.best_cost[mask]))
            )
    else:
        tbl = _graph_subset_dp(search.g0, search.g0, spec, search.ops_for)
        for mask in range(3, tbl.full_mask + 1):
            if mask & (mask - 1) == 0 or tbl.best[mask] == INF:
                continue
            out.append(
                (
                    tuple(sorted(tbl.bases[mask])),
                    _table_actions(tbl, mask),
                    tbl.best[mask],
                )
            )
    out.sort(key=lambda item: (len(item[0]), item[0]))
    return out


def collect_training(
    catalog: Catalog,
    query: Query,
    spec: CostModelSpec,
    epsilon: float = 0.0,
    seed: int = 0,
    bushy_threshold: int = 10,
    *,
    max_tuples: int | None = None,
) -> list[TrainingTuple]:
    """Harvest training tuples from optimal planning of one query.

    Queries of at most bushy_threshold relations are solved exactly; every
    memoized optimal subplan is linearized into contraction tuples labeled
    with that subplan's optimal cumulative cost. With epsilon > 0, one
    additional rollout of the final plan substitutes a random valid join
    with probability epsilon per step and continues greedily afterwards;
    its tuples from the first substitution on are labeled with the
    rollout's observed total cost (an upper bound on the optimum).

    Larger queries are contracted greedily (with the same per-step epsilon
    randomization) until bushy_threshold vertices remain, then finished
    exactly; all tuples of that single trace carry its observed total.

    max_tuples caps the memo harvest; exploration tuples are always kept.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    search = _GraphSearch(catalog, query, spec)
    if len(query.relations) < 2:
        return []
    _require_connected(search.g0)
    rng = np.random.default_rng([seed, _stable_id(query.query_id)])

    if len(query.relations) <= bushy_threshold:
        traces = _memo_traces(catalog, query, spec, search)
        tuples: list[TrainingTuple] = []
        for key, actions, v_star in traces:
            start = _induced_subgraph(search.g0, set(key))
            tuples.extend(_trace_tuples(search, start, actions, v_star))
        if max_tuples is not None:
            tuples = tuples[:max_tuples]
        if epsilon > 0.0:
            full_key, full_actions, full_v = traces[-1]
            tuples.extend(
                _rollout_tuples(search, full_actions, full_v, epsilon, rng)
            )
        return tuples

    # Too large for exact planning: greedy prefix, exact completion.
    g = search.g0
    steps: list[tuple[QueryGraph, JoinAction, QueryGraph, float]] = []
    while len(g.vertices) > bushy_threshold:
        if epsilon > 0.0 and rng.random() < epsilon:
            action = _sample_action(g, rng, search.ops_for)
            inc, _, _ = search.action_cost(g, action)
        else:
            action, inc, _, _ = _greedy_action(search, g)
        g_next = apply_join(g, action)
        steps.append((g, action, g_next, inc))
        g = g_next
    tbl = _graph_subset_dp(g, search.g0, spec, search.ops_for)
    for action in _table_actions(tbl, tbl.full_mask):
        inc, _, _ = search.action_cost(g, action)
        g_next = apply_join(g, action)
        steps.append((g, action, g_next, inc))
        g = g_next
    total = 0.0
    for _, _, _, inc in steps:
        total += inc
    tuples = [
        TrainingTuple(before, action, after, inc, total)
        for before, action, after, inc in steps
    ]
    if max_tuples is not None:
        tuples = tuples[:max_tuples]
    return tuples


def _rollout_tuples(
    search: _GraphSearch,
    planned: Sequence[JoinAction],
    v_star: float,
    epsilon: float,
    rng: np.random.Generator,
) -> list[TrainingTuple]:
    """One epsilon-randomized walk of the optimal trace.

    Steps before the first substitution stay on the optimal plan and keep
    the optimal label; once a random join is taken, the remainder is
    completed greedily and every step from the substitution on is labeled
    with the walk's observed total cost."""
    g = search.g0
    steps: list[tuple[QueryGraph, JoinAction, QueryGraph, float]] = []
    first_sub: int | None = None
    planned_iter = iter(planned)
    on_plan = True
    i = 0
    while len(g.vertices) > 1:
        if rng.random() < epsilon:
            action = _sample_action(g, rng, search.ops_for)
            if first_sub is None:
                first_sub = i
            on_plan = False
        elif on_plan:
            action = next(planned_iter)
        else:
            action, _, _, _ = _greedy_action(search, g)
        inc, _, _ = search.action_cost(g, action)
        g_next = apply_join(g, action)
        steps.append((g, action, g_next, inc))
        g = g_next
        i += 1
    total = 0.0
    for _, _, _, inc in steps:
        total += inc
    cut = len(steps) if first_sub is None else first_sub
    return [
        TrainingTuple(
            before, action, after, inc, v_star if k < cut else total
        )
        for k, (before, action, after, inc) in enumerate(steps)
    ]


# ---------------------------------------------------------------------------
# Registry


ALGORITHMS: dict[str, Callable[..., Plan]] = {
    "EX": exhaustive_dp,
    "LD": leftdeep_dp,
    "RD": rightdeep_dp,
    "ZZ": zigzag_dp,
    "IKKBZ": ikkbz,
    "LDP": ldp,
    "QP": quickpick,
    "MinSel": minsel,
    "Greedy": greedy,
}


def run_algorithm(
    name: str,
    catalog: Catalog,
    query: Query,
    spec: CostModelSpec,
    *,
    seed: int = 0,
    stats: dict | None = None,
) -> Plan:
    """Dispatch by registry name. "QP-<n>" runs QuickPick with n samples
    (bare "QP" means QP-1000). Randomized algorithms consume the seed;
    deterministic ones ignore it."""
    if name.startswith("QP"):
        n_samples = 1000
        if name != "QP":
            tail = name[2:]
            if not tail.startswith("-") or not tail[1:].isdigit():
                raise KeyError(f"unknown algorithm {name!r}")
            n_samples = int(tail[1:])
        return quickpick(
            catalog, query, spec, n_samples=n_samples, seed=seed, stats=stats
        )
    try:
        fn = ALGORITHMS[name]
    except KeyError:
        raise KeyError(f"unknown algorithm {name!r}") from None
    return fn(catalog, query, spec, stats=stats)
