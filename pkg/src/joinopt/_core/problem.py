"""Compact bitmask encoding of one planning instance.

Relations become bit positions (sorted by name), subsets become masks, and
the enumeration kernels run dynamic programs over dense arrays indexed by
mask. Everything cost-relevant is precomputed here so the kernels touch only
flat arrays.

Arithmetic contract: `subset_rows`, `cross_selectivity`, and `inc_cost` pin
the exact floating-point evaluation order. The pure-Python kernel calls
these mirrors; the compiled kernel re-implements them with the same order,
and equivalence tests hold both to bitwise-identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..catalog import Catalog, initial_graph
from ..costmodel import CostModelSpec, indexed_attribute_ids
from ..querygraph import Query

OP_HASH = 0
OP_INDEX = 1

SHAPE_EX = 0  # unrestricted (bushy)
SHAPE_LD = 1  # left-deep: right child is a base relation
SHAPE_RD = 2  # right-deep: left child is a base relation
SHAPE_ZZ = 3  # zig-zag: at least one child is a base relation

_KIND_IDS = {"CM1": 0, "CM2": 1, "CM3": 2, "Cout": 3}

MAX_RELATIONS = 20  # 2**20 memo entries; beyond this, subset DP is hopeless


@dataclass
class KernelResult:
    """Dense DP tables indexed by relation-subset mask."""

    best_cost: list  # float; inf for unreachable subsets
    best_left: list  # winning split's left mask
    best_op: list  # OP_HASH / OP_INDEX; -1 for leaves/unreachable
    best_reuse: list  # 1 when the winning hash join reused a build side
    rows: list  # canonical row estimate per mask
    evals: int  # number of incremental-cost evaluations performed
    connected: list  # bool per mask, over the problem's adjacency


@dataclass
class Problem:
    """One query, one cost model, ready for subset enumeration."""

    names: list[str]  # bit position -> relation name (name-sorted)
    base_rows: np.ndarray  # float64[n], selections folded in
    edge_u: np.ndarray  # int32[m], u < v
    edge_v: np.ndarray  # int32[m]
    edge_sel: np.ndarray  # float64[m]
    edge_au: np.ndarray  # int32[m], local attr id or -1
    edge_av: np.ndarray  # int32[m]
    adj_mask: np.ndarray  # uint64[n], neighbor bits (possibly tree-restricted)
    idx_partner_mask: np.ndarray  # uint64[n], partners enabling an index probe
    attr_offsets: np.ndarray  # int32[n_attrs + 1]
    attr_masks: np.ndarray  # uint64[sum], endpoint-pair masks per local attr
    kind_id: int
    lam: float
    mem: float

    @property
    def n(self) -> int:
        return len(self.names)

    @property
    def full_mask(self) -> int:
        return (1 << self.n) - 1

    @property
    def has_index_op(self) -> bool:
        return self.kind_id in (0, 2)  # CM1, CM3

    @property
    def reuse_enabled(self) -> bool:
        return self.kind_id == 2  # CM3


def build_problem(
    catalog: Catalog,
    query: Query,
    spec: CostModelSpec,
    adjacency_pairs: list[tuple[str, str]] | None = None,
) -> Problem:
    """Encode (catalog, query, spec) for the kernels.

    adjacency_pairs, when given, restricts which relation pairs count as
    adjacent for enumeration (used to run a left-deep DP over a spanning
    tree) while row estimates still use every original edge.
    """
    if spec.injected_costs is not None:
        raise ValueError("injected-cost specs are planned by the graph-level path")
    if len(query.relations) > MAX_RELATIONS:
        raise ValueError(
            f"{len(query.relations)} relations exceed the subset-DP limit "
            f"({MAX_RELATIONS})"
        )
    g = initial_graph(catalog, query)
    names = sorted(query.relations)
    index = {name: i for i, name in enumerate(names)}
    n = len(names)

    base_rows = np.zeros(n, dtype=np.float64)
    for name, i in index.items():
        base_rows[i] = g.vertex(name).estimated_rows

    edges = list(g.edges)
    m = len(edges)
    edge_u = np.zeros(m, dtype=np.int32)
    edge_v = np.zeros(m, dtype=np.int32)
    edge_sel = np.zeros(m, dtype=np.float64)
    global_attrs: list[tuple[int, int]] = []
    for k, e in enumerate(edges):
        u, v = index[e.left], index[e.right]
        if u > v:  # edge endpoints are name-sorted already, but be safe
            u, v = v, u
            e = type(e)(
                left=e.right,
                right=e.left,
                selectivity=e.selectivity,
                join_attribute_pair=e.join_attribute_pair,
                is_cartesian=e.is_cartesian,
            )
        edge_u[k] = u
        edge_v[k] = v
        edge_sel[k] = e.selectivity
        global_attrs.append(e.join_attribute_pair)

    # local dense attribute ids for the attrs that appear on edges
    attr_ids = sorted(
        {a for pair in global_attrs for a in pair if a >= 0}
    )
    local = {a: i for i, a in enumerate(attr_ids)}
    edge_au = np.full(m, -1, dtype=np.int32)
    edge_av = np.full(m, -1, dtype=np.int32)
    for k, (au, av) in enumerate(global_attrs):
        if au >= 0:
            edge_au[k] = local[au]
        if av >= 0:
            edge_av[k] = local[av]

    # per-local-attr list of edge endpoint-pair masks (for CM3 reuse checks)
    per_attr: list[list[int]] = [[] for _ in attr_ids]
    for k in range(m):
        pair_mask = (1 << int(edge_u[k])) | (1 << int(edge_v[k]))
        if edge_au[k] >= 0:
            per_attr[edge_au[k]].append(pair_mask)
        if edge_av[k] >= 0 and edge_av[k] != edge_au[k]:
            per_attr[edge_av[k]].append(pair_mask)
    attr_offsets = np.zeros(len(attr_ids) + 1, dtype=np.int32)
    flat: list[int] = []
    for i, masks in enumerate(per_attr):
        flat.extend(masks)
        attr_offsets[i + 1] = len(flat)
    attr_masks = np.array(flat, dtype=np.uint64)

    adj_mask = np.zeros(n, dtype=np.uint64)
    if adjacency_pairs is None:
        for k in range(m):
            adj_mask[edge_u[k]] |= np.uint64(1 << int(edge_v[k]))
            adj_mask[edge_v[k]] |= np.uint64(1 << int(edge_u[k]))
    else:
        for a, b in adjacency_pairs:
            ia, ib = index[a], index[b]
            adj_mask[ia] |= np.uint64(1 << ib)
            adj_mask[ib] |= np.uint64(1 << ia)

    idx_partner_mask = np.zeros(n, dtype=np.uint64)
    indexed = indexed_attribute_ids(catalog)
    for k, e in enumerate(edges):
        au, av = e.join_attribute_pair
        u, v = int(edge_u[k]), int(edge_v[k])
        if av in indexed:  # probe into v
            idx_partner_mask[v] |= np.uint64(1 << u)
        if au in indexed:  # probe into u
            idx_partner_mask[u] |= np.uint64(1 << v)

    return Problem(
        names=names,
        base_rows=base_rows,
        edge_u=edge_u,
        edge_v=edge_v,
        edge_sel=edge_sel,
        edge_au=edge_au,
        edge_av=edge_av,
        adj_mask=adj_mask,
        idx_partner_mask=idx_partner_mask,
        attr_offsets=attr_offsets,
        attr_masks=attr_masks,
        kind_id=_KIND_IDS[spec.kind],
        lam=spec.index_match_constant,
        mem=spec.memory_limit,
    )


# ---------------------------------------------------------------------------
# Arithmetic mirrors (exact evaluation order shared with the compiled kernel)


def cross_selectivity(p: Problem, a_mask: int, b_mask: int) -> float:
    """Product of selectivities of edges crossing the (A, B) split, in edge
    array order."""
    s = 1.0
    eu = p.edge_u
    ev = p.edge_v
    sel = p.edge_sel
    for k in range(len(eu)):
        ub = 1 << int(eu[k])
        vb = 1 << int(ev[k])
        if ((ub & a_mask) and (vb & b_mask)) or ((ub & b_mask) and (vb & a_mask)):
            s *= float(sel[k])
    return s


def subset_rows(p: Problem) -> list[float]:
    """Canonical row estimate per subset mask.

    rows[mask] peels the lowest bit: rows[rest] * base_rows[low], then the
    selectivities of edges connecting low to rest, in edge array order. The
    same value is used for every split of the mask, so costs are functions
    of sets, not of enumeration order.
    """
    n = p.n
    size = 1 << n
    rows = [0.0] * size
    base = [float(x) for x in p.base_rows]
    eu = [int(x) for x in p.edge_u]
    ev = [int(x) for x in p.edge_v]
    sel = [float(x) for x in p.edge_sel]
    m = len(eu)
    for i in range(n):
        rows[1 << i] = base[i]
    for mask in range(3, size):
        low = mask & (-mask)
        rest = mask ^ low
        if rest == 0:
            continue
        r = low.bit_length() - 1
        acc = base[r] * rows[rest]
        for k in range(m):
            if (eu[k] == r and ((1 << ev[k]) & rest)) or (
                ev[k] == r and ((1 << eu[k]) & rest)
            ):
                acc *= sel[k]
        rows[mask] = acc
    return rows


def inc_cost(
    p: Problem,
    rows_a: float,
    rows_b: float,
    rows_out: float,
    sel: float,
    op: int,
    reuse: bool,
) -> float:
    """Incremental cost of joining (A, B); mirrors costmodel.join_cost with
    the kernel's pinned operand order."""
    if op == OP_INDEX:
        match_per_probe = (p.lam * rows_b) * sel
        return match_per_probe * rows_a
    kind = p.kind_id
    if kind == 1:  # CM2
        pair_sum = rows_a + rows_b
        if pair_sum <= p.mem:
            return rows_out
        if min(rows_a, rows_b) <= p.mem * p.mem:
            return (2.0 * pair_sum) + rows_out
        return rows_b + (math.ceil(rows_b / p.mem) * rows_a)
    if kind == 2 and reuse:  # CM3 with a reusable build side
        refund = rows_out - rows_b
        return refund if refund > 0.0 else 0.0
    return rows_out  # CM1 hash, CM3 hash fresh build, Cout


def reuse_possible(p: Problem, a_mask: int, b_mask: int) -> bool:
    """CM3 structural reuse for split (A, B): some crossing edge's B-side
    attribute is an endpoint attribute of an edge internal to B."""
    if b_mask & (b_mask - 1) == 0:  # single relation
        return False
    eu = p.edge_u
    ev = p.edge_v
    eau = p.edge_au
    eav = p.edge_av
    offsets = p.attr_offsets
    masks = p.attr_masks
    for k in range(len(eu)):
        ub = 1 << int(eu[k])
        vb = 1 << int(ev[k])
        if (ub & a_mask) and (vb & b_mask):
            attr = int(eav[k])
        elif (vb & a_mask) and (ub & b_mask):
            attr = int(eau[k])
        else:
            continue
        if attr < 0:
            continue
        for j in range(int(offsets[attr]), int(offsets[attr + 1])):
            pm = int(masks[j])
            if pm & ~b_mask == 0:
                return True
    return False


def left_key_less(a_mask: int, b_mask: int) -> bool:
    """Is A's canonical key (its sorted relation-name list) lexicographically
    smaller than B's? Bit positions are name-sorted, so this compares the
    lowest differing bit, with proper-prefix sets ordered first."""
    d = a_mask ^ b_mask
    if d == 0:
        return False
    low = d & (-d)
    above = ~(low - 1) & ~low
    if a_mask & low:
        return (b_mask & above) != 0  # B continues with a later relation
    return (a_mask & above) == 0  # A is a proper prefix of B


def connectivity(p: Problem) -> list[bool]:
    """connected[mask] over the problem's adjacency masks."""
    n = p.n
    size = 1 << n
    adj = [int(x) for x in p.adj_mask]
    conn = [False] * size
    for i in range(n):
        conn[1 << i] = True
    for mask in range(3, size):
        if mask & (mask - 1) == 0:
            continue
        reach = mask & (-mask)
        frontier = reach
        while frontier:
            nxt = 0
            while frontier:
                low = frontier & (-frontier)
                frontier ^= low
                nxt |= adj[low.bit_length() - 1]
            frontier = nxt & mask & ~reach
            reach |= frontier
        conn[mask] = reach == mask
    return conn
