"""Synthetic schemas, statistics, and query workloads.

A catalog is a list of relations with per-attribute distinct counts. Join
edges are implied by shared attribute names (a relation holding another
relation's key attribute joins to it), which makes foreign-key fans and
chains arise naturally. All generators are pure functions of (config, seed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .querygraph import (
    Edge,
    Query,
    QueryEdge,
    QueryGraph,
    Selection,
    Vertex,
)


class UnknownAttributeError(ValueError):
    """A predicate or edge referenced a relation/attribute not in the catalog."""


class InfeasibleWorkloadError(ValueError):
    """The requested query size exceeds the largest connected schema component."""


# A single-table predicate is just its stored selectivity; the Selection
# record from the query layer is the predicate representation.
Predicate = Selection


@dataclass(frozen=True)
class Attribute:
    name: str
    distinct_count: int


@dataclass(frozen=True)
class Relation:
    name: str
    cardinality: int
    attributes: tuple[Attribute, ...]
    primary_key: str | None = None
    indexes: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate attribute names in {self.name}")
        for a in self.attributes:
            if not 1 <= a.distinct_count <= self.cardinality:
                raise ValueError(
                    f"{self.name}.{a.name}: distinct_count {a.distinct_count} "
                    f"outside [1, {self.cardinality}]"
                )
        if self.primary_key is not None:
            if self.primary_key not in names:
                raise ValueError(f"primary key {self.primary_key} not an attribute")
            pk = next(a for a in self.attributes if a.name == self.primary_key)
            if pk.distinct_count != self.cardinality:
                raise ValueError("primary key distinct_count must equal cardinality")

    def attribute(self, name: str) -> Attribute:
        for a in self.attributes:
            if a.name == name:
                return a
        raise UnknownAttributeError(f"no attribute {self.name}.{name}")


@dataclass(frozen=True)
class Catalog:
    relations: tuple[Relation, ...]
    # attribute name "rel.attr" -> dense id, assigned in declaration order so
    # featurization slots are stable
    attribute_index: dict[str, int] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        index: dict[str, int] = {}
        for rel in self.relations:
            for attr in rel.attributes:
                index[f"{rel.name}.{attr.name}"] = len(index)
        object.__setattr__(self, "attribute_index", index)

    @property
    def num_attributes(self) -> int:
        return len(self.attribute_index)

    def relation(self, name: str) -> Relation:
        for rel in self.relations:
            if rel.name == name:
                return rel
        raise UnknownAttributeError(f"no relation {name!r}")

    def attribute_id(self, relation: str, attribute: str) -> int:
        try:
            return self.attribute_index[f"{relation}.{attribute}"]
        except KeyError:
            raise UnknownAttributeError(
                f"no attribute {relation}.{attribute}"
            ) from None

    def has_index(self, relation: str, attribute: str) -> bool:
        return attribute in self.relation(relation).indexes

    def foreign_key_edges(self) -> list[QueryEdge]:
        """Join edges implied by shared attribute names.

        Selectivity is synthesized as 1/max(distinct counts of the two join
        attributes); for a true foreign key this is 1/distinct(primary-key
        side), so an FK join preserves the referencing side's cardinality.
        """
        edges: list[QueryEdge] = []
        for i, left in enumerate(self.relations):
            left_names = {a.name: a for a in left.attributes}
            for right in self.relations[i + 1 :]:
                for attr in right.attributes:
                    if attr.name in left_names:
                        la = left_names[attr.name]
                        sel = 1.0 / max(la.distinct_count, attr.distinct_count)
                        edges.append(
                            QueryEdge(
                                left=left.name,
                                right=right.name,
                                left_attr=la.name,
                                right_attr=attr.name,
                                selectivity=sel,
                            )
                        )
        return sorted(edges, key=lambda e: (e.left, e.right, e.left_attr))

    def to_dict(self) -> dict:
        return {
            "relations": [
                {
                    "name": rel.name,
                    "cardinality": rel.cardinality,
                    "attributes": [
                        {"name": a.name, "distinct": a.distinct_count}
                        for a in rel.attributes
                    ],
                    "primary_key": rel.primary_key,
                    "indexes": sorted(rel.indexes),
                }
                for rel in self.relations
            ]
        }

    @staticmethod
    def from_dict(obj: dict) -> "Catalog":
        return Catalog(
            relations=tuple(
                Relation(
                    name=r["name"],
                    cardinality=int(r["cardinality"]),
                    attributes=tuple(
                        Attribute(a["name"], int(a["distinct"]))
                        for a in r["attributes"]
                    ),
                    primary_key=r.get("primary_key"),
                    indexes=frozenset(r.get("indexes", ())),
                )
                for r in obj["relations"]
            )
        )


def save_catalog(catalog: Catalog, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(catalog.to_dict(), fh, indent=2)


def load_catalog(path: str) -> Catalog:
    with open(path) as fh:
        return Catalog.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Generation


def gen_catalog(
    n_relations: int,
    attrs_per_relation: int,
    row_range: tuple[int, int],
    seed: int,
    fk_probability: float = 0.4,
) -> Catalog:
    """Generate a connected synthetic schema.

    Relation i gets a primary key attribute k<i> (indexed, distinct ==
    cardinality). Every relation after the first spends one attribute slot on
    a foreign key to an earlier relation, which keeps the schema connected
    and grows fan patterns around early relations; remaining slots become
    further foreign keys with fk_probability or plain data attributes.
    """
    if n_relations < 2:
        raise ValueError("n_relations must be >= 2")
    if attrs_per_relation < 1:
        raise ValueError("attrs_per_relation must be >= 1")
    lo, hi = row_range
    if not 1 <= lo <= hi:
        raise ValueError(f"invalid row_range {row_range}")

    rng = np.random.default_rng(seed)
    width = len(str(n_relations - 1))
    cards = [int(rng.integers(lo, hi + 1)) for _ in range(n_relations)]

    relations: list[Relation] = []
    for i in range(n_relations):
        name = f"rel{i:0{width}d}"
        pk = f"k{i:0{width}d}"
        attrs = [Attribute(pk, cards[i])]
        fk_targets: set[int] = set()
        data_slot = 0
        for slot in range(attrs_per_relation - 1):
            force_fk = i > 0 and slot == 0
            want_fk = force_fk or (
                len(fk_targets) < n_relations - 1 and rng.random() < fk_probability
            )
            if want_fk:
                candidates = [j for j in range(n_relations) if j != i and j not in fk_targets]
                if force_fk:
                    candidates = [j for j in candidates if j < i]
                if candidates:
                    j = int(rng.choice(candidates))
                    fk_targets.add(j)
                    attrs.append(
                        Attribute(f"k{j:0{width}d}", min(cards[i], cards[j]))
                    )
                    continue
            attrs.append(
                Attribute(f"v{i}_{data_slot}", int(rng.integers(1, cards[i] + 1)))
            )
            data_slot += 1
        relations.append(
            Relation(
                name=name,
                cardinality=cards[i],
                attributes=tuple(attrs),
                primary_key=pk,
                indexes=frozenset((pk,)),
            )
        )
    return Catalog(relations=tuple(relations))


def demo_catalog() -> Catalog:
    """A three-relation employees/positions/salaries demo schema."""
    return Catalog(
        relations=(
            Relation(
                name="Emp",
                cardinality=1000,
                attributes=(
                    Attribute("id", 1000),
                    Attribute("name", 950),
                    Attribute("rank", 20),
                ),
                primary_key="id",
                indexes=frozenset(("id",)),
            ),
            Relation(
                name="Pos",
                cardinality=20,
                attributes=(
                    Attribute("rank", 20),
                    Attribute("title", 20),
                    Attribute("code", 15),
                ),
                primary_key="rank",
                indexes=frozenset(("rank",)),
            ),
            Relation(
                name="Sal",
                cardinality=15,
                attributes=(
                    Attribute("code", 15),
                    Attribute("amount", 15),
                ),
                primary_key="code",
                indexes=frozenset(("code",)),
            ),
        )
    )


def demo_query(selections: tuple[Selection, ...] = ()) -> Query:
    """The demo join Emp-Pos-Sal over the demo catalog."""
    catalog = demo_catalog()
    edges = [
        e
        for e in catalog.foreign_key_edges()
        if {e.left, e.right} in ({"Emp", "Pos"}, {"Pos", "Sal"})
    ]
    return Query(
        query_id="demo",
        relations=("Emp", "Pos", "Sal"),
        edges=tuple(edges),
        selections=selections,
    )


# ---------------------------------------------------------------------------
# Workloads


class SamplingScheme(str, Enum):
    RANDOM_SCHEMA = "RandomSchema"
    RANDOM_WITH_WORKLOAD_PREDICATES = "RandomWithWorkloadPredicates"
    FROM_TEMPLATES = "FromTemplates"


@dataclass(frozen=True)
class WorkloadConfig:
    num_queries: int
    min_relations: int = 2
    max_relations: int = 6
    predicate_probability: float = 0.5
    selectivity_range: tuple[float, float] = (0.05, 1.0)
    scheme: SamplingScheme = SamplingScheme.RANDOM_SCHEMA
    seed: int = 0
    num_templates: int = 33

    def __post_init__(self) -> None:
        if not 2 <= self.min_relations <= self.max_relations:
            raise ValueError("need 2 <= min_relations <= max_relations")
        if not 0.0 <= self.predicate_probability <= 1.0:
            raise ValueError("predicate_probability outside [0, 1]")
        lo, hi = self.selectivity_range
        if not 0.0 < lo <= hi <= 1.0:
            raise ValueError("selectivity_range outside (0, 1]")


def _schema_adjacency(catalog: Catalog) -> dict[str, set[str]]:
    adj: dict[str, set[str]] = {rel.name: set() for rel in catalog.relations}
    for e in catalog.foreign_key_edges():
        adj[e.left].add(e.right)
        adj[e.right].add(e.left)
    return adj


def _largest_component(adj: dict[str, set[str]]) -> set[str]:
    best: set[str] = set()
    seen: set[str] = set()
    for start in sorted(adj):
        if start in seen:
            continue
        component = {start}
        frontier = [start]
        while frontier:
            for nxt in adj[frontier.pop()]:
                if nxt not in component:
                    component.add(nxt)
                    frontier.append(nxt)
        seen |= component
        if len(component) > len(best):
            best = component
    return best


def _grow_connected(
    adj: dict[str, set[str]], component: Sequence[str], size: int, rng
) -> list[str]:
    start = str(rng.choice(sorted(component)))
    chosen = [start]
    chosen_set = {start}
    while len(chosen) < size:
        frontier = sorted(
            {n for v in chosen for n in adj[v] if n not in chosen_set}
        )
        nxt = str(rng.choice(frontier))
        chosen.append(nxt)
        chosen_set.add(nxt)
    return sorted(chosen)


def _induced_edges(catalog: Catalog, relations: Iterable[str]) -> tuple[QueryEdge, ...]:
    names = set(relations)
    return tuple(
        e
        for e in catalog.foreign_key_edges()
        if e.left in names and e.right in names
    )


def _random_selections(
    catalog: Catalog, relations: Sequence[str], config: WorkloadConfig, rng
) -> tuple[Selection, ...]:
    lo, hi = config.selectivity_range
    out: list[Selection] = []
    for name in relations:
        if rng.random() >= config.predicate_probability:
            continue
        rel = catalog.relation(name)
        candidates = [a.name for a in rel.attributes if a.name != rel.primary_key]
        if not candidates:
            continue
        attr = str(rng.choice(candidates))
        out.append(Selection(name, attr, float(rng.uniform(lo, hi))))
    return tuple(out)


def sample_queries(
    catalog: Catalog,
    config: WorkloadConfig,
    reference: Sequence[Query] | None = None,
) -> list[Query]:
    """Sample a workload of connected join queries.

    RandomSchema draws fresh relation subsets and fresh predicates.
    RandomWithWorkloadPredicates draws fresh subsets but reuses predicates of
    a reference workload (matched by relation). FromTemplates fixes
    num_templates relation subsets first and randomizes only predicates,
    covering every template at least once when num_queries allows.
    """
    adj = _schema_adjacency(catalog)
    component = sorted(_largest_component(adj))
    if config.max_relations > len(component):
        raise InfeasibleWorkloadError(
            f"max_relations {config.max_relations} exceeds largest connected "
            f"schema component ({len(component)} relations)"
        )
    if config.scheme is SamplingScheme.RANDOM_WITH_WORKLOAD_PREDICATES:
        if not reference:
            raise ValueError("scheme needs a reference workload for predicates")
        pool: dict[str, list[Selection]] = {}
        for q in reference:
            for s in q.selections:
                pool.setdefault(s.relation, []).append(s)

    rng = np.random.default_rng(config.seed)
    templates: list[list[str]] = []
    if config.scheme is SamplingScheme.FROM_TEMPLATES:
        for _ in range(config.num_templates):
            size = int(rng.integers(config.min_relations, config.max_relations + 1))
            templates.append(_grow_connected(adj, component, size, rng))

    queries: list[Query] = []
    for i in range(config.num_queries):
        if config.scheme is SamplingScheme.FROM_TEMPLATES:
            t = i if i < len(templates) else int(rng.integers(0, len(templates)))
            relations = templates[t]
            query_id = f"q{i:04d}_t{t:02d}"
        else:
            size = int(rng.integers(config.min_relations, config.max_relations + 1))
            relations = _grow_connected(adj, component, size, rng)
            query_id = f"q{i:04d}"

        if config.scheme is SamplingScheme.RANDOM_WITH_WORKLOAD_PREDICATES:
            selections: list[Selection] = []
            for name in relations:
                if name in pool and rng.random() < config.predicate_probability:
                    selections.append(pool[name][int(rng.integers(0, len(pool[name])))])
            selections_t = tuple(selections)
        else:
            selections_t = _random_selections(catalog, relations, config, rng)

        queries.append(
            Query(
                query_id=query_id,
                relations=tuple(relations),
                edges=_induced_edges(catalog, relations),
                selections=selections_t,
            )
        )
    return queries


def selectivity(catalog: Catalog, predicate: Selection | Iterable[Selection] | None) -> float:
    """Stored ground-truth selectivity of a predicate or conjunction.

    None (a tautology) scores 1.0; a sequence multiplies its members under
    independence. Unknown relations/attributes raise.
    """
    if predicate is None:
        return 1.0
    if isinstance(predicate, Selection):
        predicate = (predicate,)
    total = 1.0
    for p in predicate:
        catalog.relation(p.relation).attribute(p.attribute)  # existence check
        if not 0.0 < p.selectivity <= 1.0:
            raise ValueError(f"stored selectivity {p.selectivity} outside (0, 1]")
        total *= p.selectivity
    return total


def cv_splits(
    queries: Sequence[Query],
    k: int,
    seed: int = 0,
    n_train: int | None = None,
) -> list[tuple[list[Query], list[Query]]]:
    """Seed-deterministic cross-validation folds.

    Returns k (train, test) pairs where every query lands in exactly one
    test fold. With n_train set, returns a single (first n_train, rest)
    split of the shuffled workload instead.
    """
    if n_train is not None:
        if not 1 <= n_train < len(queries):
            raise ValueError(f"n_train {n_train} outside [1, {len(queries) - 1}]")
    elif not 2 <= k <= len(queries):
        raise ValueError(f"need 2 <= k <= {len(queries)}")

    order = list(np.random.default_rng(seed).permutation(len(queries)))
    shuffled = [queries[i] for i in order]
    if n_train is not None:
        return [(shuffled[:n_train], shuffled[n_train:])]
    folds = []
    for i in range(k):
        test = shuffled[i::k]
        test_ids = {q.query_id for q in test}
        train = [q for q in shuffled if q.query_id not in test_ids]
        folds.append((train, test))
    return folds


def perturb_cardinalities(catalog: Catalog, n_relations: int, seed: int) -> Catalog:
    """Scale n randomly chosen relations' cardinalities by 2, 4, 8, or 16.

    The primary key's distinct count tracks the new cardinality (it must
    equal it); other attributes keep their old statistics, so join
    selectivities seen by the planner drift exactly as intended.
    """
    if n_relations > len(catalog.relations):
        raise ValueError("n_relations exceeds catalog size")
    rng = np.random.default_rng(seed)
    picked = sorted(
        int(i) for i in rng.choice(len(catalog.relations), size=n_relations, replace=False)
    )
    relations = list(catalog.relations)
    for i in picked:
        rel = relations[i]
        factor = int(rng.choice((2, 4, 8, 16)))
        new_card = rel.cardinality * factor
        attrs = tuple(
            Attribute(a.name, new_card) if a.name == rel.primary_key else a
            for a in rel.attributes
        )
        relations[i] = replace(rel, cardinality=new_card, attributes=attrs)
    return Catalog(relations=tuple(relations))


# ---------------------------------------------------------------------------
# Graph construction


def initial_graph(catalog: Catalog, query: Query) -> QueryGraph:
    """Build the planning start state: one vertex per relation, selections
    folded into estimated_rows at leaf creation."""
    fold: dict[str, float] = {name: 1.0 for name in query.relations}
    for s in query.selections:
        if s.relation not in fold:
            raise UnknownAttributeError(
                f"selection on {s.relation} which is not in query {query.query_id}"
            )
        catalog.relation(s.relation).attribute(s.attribute)
        fold[s.relation] *= s.selectivity

    vertices: dict[str, Vertex] = {}
    for name in query.relations:
        rel = catalog.relation(name)
        attr_ids = tuple(
            catalog.attribute_id(name, a.name) for a in rel.attributes
        )
        vertices[name] = Vertex(
            id=name,
            base_relations=frozenset((name,)),
            visible_attributes=tuple(sorted(attr_ids)),
            estimated_rows=rel.cardinality * fold[name],
        )

    edges = tuple(
        Edge(
            left=e.left,
            right=e.right,
            selectivity=e.selectivity,
            join_attribute_pair=(
                catalog.attribute_id(e.left, e.left_attr),
                catalog.attribute_id(e.right, e.right_attr),
            ),
        )
        for e in query.edges
    )
    return QueryGraph(vertices=vertices, edges=edges, query_id=query.query_id)
