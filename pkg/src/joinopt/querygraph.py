"""Query graphs and the contraction-based state transition of join planning.

A query is an undirected graph: vertices are (possibly merged) relations,
edges are join predicates. Planning contracts one edge at a time; the two
endpoints are replaced by a merged vertex that inherits their base relations,
visible attributes, and incident edges. Planning is finished when the number
of vertices equals the number of connected components.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Iterator


class UnknownVertexError(ValueError):
    """A join action referenced a vertex that is not in the graph."""


class JoinOperator(str, Enum):
    HASH_JOIN = "HashJoin"
    INDEX_JOIN = "IndexJoin"
    NESTED_LOOP_JOIN = "NestedLoopJoin"

    def __str__(self) -> str:  # serialization and sort keys use the value

        return self.value


@dataclass(frozen=True)
class Vertex:
    """One planning unit: a base relation or a merged intermediate result."""

    id: str
    base_relations: frozenset[str]
    visible_attributes: tuple[int, ...]
    estimated_rows: float

    @property
    def is_base(self) -> bool:
        return len(self.base_relations) == 1


@dataclass(frozen=True)
class Edge:
    """A join predicate between two vertices.

    Endpoints are stored with left < right (vertex id order) and the
    attribute pair aligned with that orientation. A collapsed edge keeps the
    smallest attribute pair of its originals; per-attribute detail for
    merged vertices lives in the original query edges, not here.
    """

    left: str
    right: str
    selectivity: float
    join_attribute_pair: tuple[int, int] = (-1, -1)
    is_cartesian: bool = False

    def __post_init__(self) -> None:
        if self.left == self.right:
            raise ValueError(f"self-loop edge on {self.left!r}")
        if not 0.0 < self.selectivity <= 1.0:
            raise ValueError(f"selectivity {self.selectivity} outside (0, 1]")
        if self.left > self.right:
            flipped_left, flipped_right = self.right, self.left
            a, b = self.join_attribute_pair
            object.__setattr__(self, "left", flipped_left)
            object.__setattr__(self, "right", flipped_right)
            object.__setattr__(self, "join_attribute_pair", (b, a))

    def other(self, vertex_id: str) -> str:
        return self.right if vertex_id == self.left else self.left


@dataclass(frozen=True)
class JoinAction:
    """A single contraction: join the vertices named left and right.

    Orientation matters to cost models that distinguish build and probe
    sides, so (u, v) and (v, u) are distinct actions over the same pair.
    """

    left: str
    right: str
    operator: JoinOperator = JoinOperator.HASH_JOIN

    def sort_key(self) -> tuple[str, str, str]:
        return (self.left, self.right, self.operator.value)


@dataclass(frozen=True)
class QueryGraph:
    """Immutable graph state. apply_join returns a fresh graph."""

    vertices: dict[str, Vertex]
    edges: tuple[Edge, ...]
    query_id: str = ""

    def __post_init__(self) -> None:
        for e in self.edges:
            if e.left not in self.vertices or e.right not in self.vertices:
                raise UnknownVertexError(
                    f"edge {e.left}-{e.right} references a missing vertex"
                )

    def vertex(self, vertex_id: str) -> Vertex:
        try:
            return self.vertices[vertex_id]
        except KeyError:
            raise UnknownVertexError(f"no vertex {vertex_id!r}") from None

    def vertex_ids(self) -> list[str]:
        return sorted(self.vertices)

    def edges_between(self, u: str, v: str) -> list[Edge]:
        a, b = min(u, v), max(u, v)
        return [e for e in self.edges if e.left == a and e.right == b]

    def pair_selectivity(self, u: str, v: str) -> float:
        """Combined selectivity of all edges between u and v (1.0 if none)."""
        sel = 1.0
        for e in self.edges_between(u, v):
            sel *= e.selectivity
        return sel

    def adjacent(self, u: str, v: str) -> bool:
        return bool(self.edges_between(u, v))

    def neighbors(self, vertex_id: str) -> set[str]:
        out: set[str] = set()
        for e in self.edges:
            if e.left == vertex_id:
                out.add(e.right)
            elif e.right == vertex_id:
                out.add(e.left)
        return out


def _default_rows(left: Vertex, right: Vertex, selectivity: float) -> float:
    return left.estimated_rows * right.estimated_rows * selectivity


RowEstimator = Callable[[Vertex, Vertex, float], float]


def merged_vertex_id(base_relations: Iterable[str]) -> str:
    return "+".join(sorted(base_relations))


def apply_join(
    g: QueryGraph, c: JoinAction, row_estimator: RowEstimator | None = None
) -> QueryGraph:
    """Contract c.left and c.right into one merged vertex.

    The merged vertex unions base relations and visible attributes; edges to
    any third vertex are reattached, with parallel edges collapsed into one
    whose selectivity is the product of the originals (independence).
    """
    left = g.vertex(c.left)
    right = g.vertex(c.right)
    if c.left == c.right:
        raise UnknownVertexError("join action must name two distinct vertices")

    estimate = row_estimator or _default_rows
    merged = Vertex(
        id=merged_vertex_id(left.base_relations | right.base_relations),
        base_relations=left.base_relations | right.base_relations,
        visible_attributes=tuple(
            sorted(set(left.visible_attributes) | set(right.visible_attributes))
        ),
        estimated_rows=estimate(left, right, g.pair_selectivity(c.left, c.right)),
    )

    vertices = {
        vid: v for vid, v in g.vertices.items() if vid not in (c.left, c.right)
    }
    vertices[merged.id] = merged

    untouched: list[Edge] = []
    reattached: dict[str, list[Edge]] = {}
    for e in g.edges:
        ends = {e.left, e.right}
        hit = ends & {c.left, c.right}
        if len(hit) == 2:
            continue  # the contracted edge itself
        if not hit:
            untouched.append(e)
            continue
        reattached.setdefault(e.other(hit.pop()), []).append(e)

    new_edges = untouched
    for other, parallel in sorted(reattached.items()):
        sel = 1.0
        for e in sorted(parallel, key=lambda e: e.join_attribute_pair):
            sel *= e.selectivity
        new_edges.append(
            Edge(
                left=merged.id,
                right=other,
                selectivity=sel,
                join_attribute_pair=min(e.join_attribute_pair for e in parallel),
                is_cartesian=all(e.is_cartesian for e in parallel),
            )
        )

    return QueryGraph(
        vertices=vertices,
        edges=tuple(sorted(new_edges, key=lambda e: (e.left, e.right))),
        query_id=g.query_id,
    )


EligibleOps = Callable[[Vertex, Vertex], Iterable[JoinOperator]]


def _hash_only(left: Vertex, right: Vertex) -> Iterable[JoinOperator]:
    return (JoinOperator.HASH_JOIN,)


def valid_joins(
    g: QueryGraph,
    allow_cartesian: bool = False,
    eligible_ops: EligibleOps | None = None,
) -> list[JoinAction]:
    """Enumerate the candidate actions of the current graph.

    eligible_ops is called per oriented (left, right) vertex pair and returns
    the operators allowed with that orientation. Orientation-symmetric
    operators (hash, nested loop) are emitted once per pair in canonical
    order; index joins are emitted per eligible orientation because the
    probe side is fixed. Output is sorted by (left, right, operator).
    """
    ops_for = eligible_ops or _hash_only
    ids = g.vertex_ids()
    actions: set[JoinAction] = set()
    for i, u in enumerate(ids):
        for v in ids[i + 1 :]:
            if not (g.adjacent(u, v) or allow_cartesian):
                continue
            for a, b in ((u, v), (v, u)):
                for op in ops_for(g.vertices[a], g.vertices[b]):
                    if op is JoinOperator.INDEX_JOIN:
                        actions.add(JoinAction(a, b, op))
                    else:
                        actions.add(JoinAction(u, v, op))
    return sorted(actions, key=JoinAction.sort_key)


def connected_components(g: QueryGraph) -> int:
    seen: set[str] = set()
    count = 0
    for start in g.vertex_ids():
        if start in seen:
            continue
        count += 1
        frontier = [start]
        seen.add(start)
        while frontier:
            for other in g.neighbors(frontier.pop()):
                if other not in seen:
                    seen.add(other)
                    frontier.append(other)
    return count


def graph_to_dict(g: QueryGraph) -> dict:
    return {
        "query_id": g.query_id,
        "vertices": [
            {
                "id": v.id,
                "base_relations": sorted(v.base_relations),
                "visible_attributes": list(v.visible_attributes),
                "estimated_rows": v.estimated_rows,
            }
            for _, v in sorted(g.vertices.items())
        ],
        "edges": [
            {
                "left": e.left,
                "right": e.right,
                "selectivity": e.selectivity,
                "join_attribute_pair": list(e.join_attribute_pair),
                "is_cartesian": e.is_cartesian,
            }
            for e in g.edges
        ],
    }


def graph_from_dict(obj: dict) -> QueryGraph:
    vertices = {
        v["id"]: Vertex(
            id=v["id"],
            base_relations=frozenset(v["base_relations"]),
            visible_attributes=tuple(v["visible_attributes"]),
            estimated_rows=float(v["estimated_rows"]),
        )
        for v in obj["vertices"]
    }
    edges = tuple(
        Edge(
            left=e["left"],
            right=e["right"],
            selectivity=float(e["selectivity"]),
            join_attribute_pair=tuple(e["join_attribute_pair"]),
            is_cartesian=bool(e.get("is_cartesian", False)),
        )
        for e in obj["edges"]
    )
    return QueryGraph(vertices=vertices, edges=edges, query_id=obj.get("query_id", ""))


# ---------------------------------------------------------------------------
# Queries (the serializable source data a graph is built from)


@dataclass(frozen=True)
class QueryEdge:
    left: str
    right: str
    left_attr: str
    right_attr: str
    selectivity: float


@dataclass(frozen=True)
class Selection:
    """A single-table predicate, represented only by its selectivity."""

    relation: str
    attribute: str
    selectivity: float


@dataclass(frozen=True)
class Query:
    query_id: str
    relations: tuple[str, ...]
    edges: tuple[QueryEdge, ...]
    selections: tuple[Selection, ...] = ()

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "relations": list(self.relations),
            "edges": [
                {
                    "left": e.left,
                    "right": e.right,
                    "left_attr": e.left_attr,
                    "right_attr": e.right_attr,
                    "selectivity": e.selectivity,
                }
                for e in self.edges
            ],
            "selections": [
                {
                    "relation": s.relation,
                    "attribute": s.attribute,
                    "selectivity": s.selectivity,
                }
                for s in self.selections
            ],
        }

    @staticmethod
    def from_dict(obj: dict) -> "Query":
        return Query(
            query_id=str(obj["query_id"]),
            relations=tuple(obj["relations"]),
            edges=tuple(
                QueryEdge(
                    left=e["left"],
                    right=e["right"],
                    left_attr=e["left_attr"],
                    right_attr=e["right_attr"],
                    selectivity=float(e["selectivity"]),
                )
                for e in obj["edges"]
            ),
            selections=tuple(
                Selection(
                    relation=s["relation"],
                    attribute=s["attribute"],
                    selectivity=float(s["selectivity"]),
                )
                for s in obj.get("selections", ())
            ),
        )


def save_queries(queries: Iterable[Query], path: str) -> None:
    with open(path, "w") as fh:
        json.dump([q.to_dict() for q in queries], fh, indent=2)


def load_queries(path: str) -> list[Query]:
    with open(path) as fh:
        return [Query.from_dict(obj) for obj in json.load(fh)]


# ---------------------------------------------------------------------------
# Plans


@dataclass(frozen=True)
class PlanNode:
    """Binary plan tree node. Leaves carry base relations, internals joins.

    selectivity is the combined selectivity of the join edges crossing
    left/right; hash_reuse marks joins whose build side already has a usable
    hash table (a structural property of the query, consumed by the reuse
    cost model).
    """

    base_relations: frozenset[str]
    estimated_rows: float
    relation: str | None = None
    action: JoinAction | None = None
    left: "PlanNode | None" = None
    right: "PlanNode | None" = None
    incremental_cost: float = 0.0
    selectivity: float = 1.0
    hash_reuse: bool = False

    @property
    def is_leaf(self) -> bool:
        return self.relation is not None

    def iter_postorder(self) -> Iterator["PlanNode"]:
        if self.left is not None:
            yield from self.left.iter_postorder()
        if self.right is not None:
            yield from self.right.iter_postorder()
        yield self


def leaf_node(relation: str, rows: float) -> PlanNode:
    return PlanNode(
        base_relations=frozenset((relation,)),
        estimated_rows=rows,
        relation=relation,
    )


@dataclass(frozen=True)
class Plan:
    root: PlanNode
    total_cost: float
    query_id: str = ""

    def leaves(self) -> list[str]:
        return sorted(
            node.relation for node in self.root.iter_postorder() if node.is_leaf
        )

    def join_count(self) -> int:
        return sum(1 for node in self.root.iter_postorder() if not node.is_leaf)


def _node_to_dict(node: PlanNode) -> dict:
    if node.is_leaf:
        return {"relation": node.relation, "rows": node.estimated_rows}
    return {
        "operator": node.action.operator.value,
        "rows": node.estimated_rows,
        "incremental_cost": node.incremental_cost,
        "selectivity": node.selectivity,
        "hash_reuse": node.hash_reuse,
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
    }


def _node_from_dict(obj: dict) -> PlanNode:
    if "relation" in obj:
        return leaf_node(obj["relation"], float(obj["rows"]))
    left = _node_from_dict(obj["left"])
    right = _node_from_dict(obj["right"])
    action = JoinAction(
        left=merged_vertex_id(left.base_relations),
        right=merged_vertex_id(right.base_relations),
        operator=JoinOperator(obj["operator"]),
    )
    return PlanNode(
        base_relations=left.base_relations | right.base_relations,
        estimated_rows=float(obj["rows"]),
        action=action,
        left=left,
        right=right,
        incremental_cost=float(obj["incremental_cost"]),
        selectivity=float(obj.get("selectivity", 1.0)),
        hash_reuse=bool(obj.get("hash_reuse", False)),
    )


def plan_to_dict(plan: Plan) -> dict:
    return {
        "query_id": plan.query_id,
        "total_cost": plan.total_cost,
        "root": _node_to_dict(plan.root),
    }


def plan_from_dict(obj: dict) -> Plan:
    return Plan(
        root=_node_from_dict(obj["root"]),
        total_cost=float(obj["total_cost"]),
        query_id=str(obj.get("query_id", "")),
    )


def save_plan(plan: Plan, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(plan_to_dict(plan), fh, indent=2)


def load_plan(path: str) -> Plan:
    with open(path) as fh:
        return plan_from_dict(json.load(fh))


def format_plan(plan: Plan) -> str:
    """Readable indented rendering for CLI output."""
    lines: list[str] = []

    def walk(node: PlanNode, depth: int) -> None:
        pad = "  " * depth
        if node.is_leaf:
            lines.append(f"{pad}{node.relation}  rows={node.estimated_rows:g}")
            return
        lines.append(
            f"{pad}{node.action.operator.value}"
            f"  rows={node.estimated_rows:g}"
            f"  cost+={node.incremental_cost:g}"
        )
        walk(node.left, depth + 1)
        walk(node.right, depth + 1)

    walk(plan.root, 0)
    lines.append(f"total_cost={plan.total_cost:g}")
    return "\n".join(lines)
