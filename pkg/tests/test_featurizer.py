"""Feature-vector layout, fixture vectors, and featurization invariants.

The fixed vectors for the three-relation demo schema (8 attributes: Emp.id,
Emp.name, Emp.rank, Pos.rank, Pos.title, Pos.code, Sal.code, Sal.amount)
are frozen here and the implementation must reproduce them exactly.
"""

from __future__ import annotations

import json

import numpy as np
import pytest

from joinopt.catalog import (
    Attribute,
    Catalog,
    Relation,
    UnknownAttributeError,
    demo_catalog,
    demo_query,
    initial_graph,
)
from joinopt.featurizer import (
    DEFAULT_OPERATORS,
    FeaturizerConfig,
    config_hash,
    explain,
    feature_dim,
    featurize,
    featurize_actions,
    graph_slots,
    side_slots,
)
from joinopt.querygraph import (
    JoinAction,
    JoinOperator,
    Query,
    QueryGraph,
    Selection,
    UnknownVertexError,
    Vertex,
    apply_join,
    valid_joins,
)

HASH = JoinOperator.HASH_JOIN
INDEX = JoinOperator.INDEX_JOIN

# Demo-schema feature fixtures (8 attribute slots, listed above).
ALL_VISIBLE = [1.0] * 8
EMP_ONLY = [1, 1, 1, 0, 0, 0, 0, 0]
POS_ONLY = [0, 0, 0, 1, 1, 1, 0, 0]
EMP_POS = [1, 1, 1, 1, 1, 1, 0, 0]
SAL_ONLY = [0, 0, 0, 0, 0, 0, 1, 1]
SCALED_BY_EMP_ID_PREDICATE = [0.2, 1, 1, 1, 1, 1, 1, 1]


@pytest.fixture(scope="module")
def demo():
    catalog = demo_catalog()
    query = demo_query()
    return catalog, query, initial_graph(catalog, query)


def _segments(vec: np.ndarray, n_attrs: int) -> tuple[list, list, list, list]:
    g = list(vec[:n_attrs])
    left = list(vec[n_attrs : 2 * n_attrs])
    right = list(vec[2 * n_attrs : 3 * n_attrs])
    ops = list(vec[3 * n_attrs :])
    return g, left, right, ops


class TestFixtureVectors:
    def test_graph_slots_all_visible(self, demo):
        catalog, query, g = demo
        assert list(graph_slots(catalog, query, g)) == ALL_VISIBLE

    def test_first_join_side_vectors(self, demo):
        catalog, query, g = demo
        vec = featurize(catalog, query, g, JoinAction("Emp", "Pos", HASH))
        gseg, left, right, ops = _segments(vec, 8)
        assert gseg == ALL_VISIBLE
        assert left == EMP_ONLY
        assert right == POS_ONLY
        assert ops == [1.0, 0.0]
        assert list(side_slots(catalog, g, "Emp")) == EMP_ONLY
        assert list(side_slots(catalog, g, "Pos")) == POS_ONLY

    def test_final_join_side_vectors(self, demo):
        catalog, query, g = demo
        g2 = apply_join(g, JoinAction("Emp", "Pos", HASH))
        vec = featurize(catalog, query, g2, JoinAction("Emp+Pos", "Sal", HASH))
        _, left, right, _ = _segments(vec, 8)
        assert left == EMP_POS
        assert right == SAL_ONLY

    def test_predicate_scales_graph_slot(self):
        catalog = demo_catalog()
        query = demo_query(selections=(Selection("Emp", "id", 0.2),))
        g = initial_graph(catalog, query)
        assert list(graph_slots(catalog, query, g)) == SCALED_BY_EMP_ID_PREDICATE
        vec = featurize(catalog, query, g, JoinAction("Emp", "Pos", HASH))
        gseg, left, _, _ = _segments(vec, 8)
        assert gseg == SCALED_BY_EMP_ID_PREDICATE
        assert left == EMP_ONLY  # side slots are never scaled

    def test_index_operator_one_hot(self, demo):
        catalog, query, g = demo
        vec = featurize(catalog, query, g, JoinAction("Emp", "Pos", INDEX))
        assert list(vec[-2:]) == [0.0, 1.0]


class TestDimension:
    def test_demo_dim_is_26(self, demo):
        catalog, _, _ = demo
        assert feature_dim(catalog, 2) == 26

    def test_single_attribute_single_operator(self):
        tiny = Catalog(relations=(Relation("T", 10, (Attribute("a", 5),)),))
        assert feature_dim(tiny, 1) == 4

    def test_every_vector_has_the_declared_length(self, demo, small_workload):
        catalog, queries = small_workload
        dim = feature_dim(catalog, len(DEFAULT_OPERATORS))
        for query in queries[:6]:
            g = initial_graph(catalog, query)
            for action in valid_joins(g):
                assert featurize(catalog, query, g, action).shape == (dim,)

    def test_rejects_empty_operator_count(self, demo):
        catalog, _, _ = demo
        with pytest.raises(ValueError):
            feature_dim(catalog, 0)


class TestInvariants:
    def test_sides_disjoint_union_matches_merge_and_bounds(self, small_workload):
        catalog, queries = small_workload
        checked = 0
        for query in queries[:8]:
            g = initial_graph(catalog, query)
            while len(g.vertices) > 1:
                actions = valid_joins(g)
                if not actions:
                    break
                for action in actions:
                    vec = featurize(catalog, query, g, action)
                    n = catalog.num_attributes
                    gseg, left, right, ops = _segments(vec, n)
                    assert all(0.0 <= x <= 1.0 for x in gseg + left + right)
                    assert sum(ops) == 1.0 and set(ops) <= {0.0, 1.0}
                    # a valid join never sees the same attribute on both sides
                    assert not any(l > 0 and r > 0 for l, r in zip(left, right))
                    merged = apply_join(g, action)
                    merged_id = [
                        v
                        for v in merged.vertices.values()
                        if v.base_relations
                        == (
                            g.vertex(action.left).base_relations
                            | g.vertex(action.right).base_relations
                        )
                    ][0]
                    indicator = np.zeros(n)
                    indicator[list(merged_id.visible_attributes)] = 1.0
                    assert np.array_equal(np.maximum(left, right), indicator)
                    checked += 1
                g = apply_join(g, actions[0])
        assert checked >= 30

    def test_graph_slots_zero_for_relations_outside_query(self, small_workload):
        catalog, queries = small_workload
        query = next(q for q in queries if len(q.relations) < len(catalog.relations))
        g = initial_graph(catalog, query)
        slots = graph_slots(catalog, query, g)
        in_query = set()
        for name in query.relations:
            rel = catalog.relation(name)
            in_query |= {catalog.attribute_id(name, a.name) for a in rel.attributes}
        for attr_id in range(catalog.num_attributes):
            if attr_id not in in_query:
                assert slots[attr_id] == 0.0

    def test_multiple_predicates_on_one_attribute_multiply(self):
        catalog = demo_catalog()
        query = demo_query(
            selections=(Selection("Emp", "id", 0.5), Selection("Emp", "id", 0.4))
        )
        g = initial_graph(catalog, query)
        assert graph_slots(catalog, query, g)[0] == 0.5 * 0.4

    def test_batch_matches_single_calls(self, demo):
        catalog, query, g = demo
        actions = valid_joins(g)
        batch = featurize_actions(catalog, query, g, actions)
        assert batch.shape == (len(actions), feature_dim(catalog, 2))
        for row, action in zip(batch, actions):
            assert np.array_equal(row, featurize(catalog, query, g, action))


class TestAblation:
    def test_disable_graph_slots_zeroes_only_that_segment(self, demo):
        catalog, query, g = demo
        config = FeaturizerConfig(include_graph_slots=False)
        vec = featurize(catalog, query, g, JoinAction("Emp", "Pos", HASH), config)
        gseg, left, right, ops = _segments(vec, 8)
        assert gseg == [0.0] * 8
        assert left == EMP_ONLY and right == POS_ONLY and ops == [1.0, 0.0]

    def test_disable_scaling_keeps_indicator(self):
        catalog = demo_catalog()
        query = demo_query(selections=(Selection("Emp", "id", 0.2),))
        g = initial_graph(catalog, query)
        config = FeaturizerConfig(scale_by_selectivity=False)
        assert list(graph_slots(catalog, query, g, config)) == ALL_VISIBLE

    def test_custom_operator_vocabulary(self, demo):
        catalog, query, g = demo
        config = FeaturizerConfig(operators=(INDEX,))
        vec = featurize(catalog, query, g, JoinAction("Emp", "Pos", INDEX), config)
        assert vec.shape == (25,)
        assert vec[-1] == 1.0


class TestErrors:
    def test_unknown_vertex_in_action(self, demo):
        catalog, query, g = demo
        with pytest.raises(UnknownVertexError):
            featurize(catalog, query, g, JoinAction("Emp", "Nope", HASH))

    def test_operator_outside_vocabulary(self, demo):
        catalog, query, g = demo
        config = FeaturizerConfig(operators=(HASH,))
        with pytest.raises(ValueError):
            featurize(catalog, query, g, JoinAction("Emp", "Pos", INDEX), config)

    def test_selection_on_unknown_attribute(self, demo):
        catalog, _, g = demo
        dirty = Query(
            query_id="dirty",
            relations=("Emp", "Pos", "Sal"),
            edges=demo_query().edges,
            selections=(Selection("Emp", "nope", 0.5),),
        )
        with pytest.raises(UnknownAttributeError):
            featurize(catalog, dirty, g, JoinAction("Emp", "Pos", HASH))

    def test_attribute_id_beyond_catalog(self, demo):
        catalog, query, _ = demo
        rogue = QueryGraph(
            vertices={
                "X": Vertex("X", frozenset({"X"}), (99,), 1.0),
                "Y": Vertex("Y", frozenset({"Y"}), (0,), 1.0),
            },
            edges=(),
        )
        with pytest.raises(UnknownAttributeError):
            featurize(catalog, query, rogue, JoinAction("X", "Y", HASH))

    def test_duplicate_operators_rejected(self):
        with pytest.raises(ValueError):
            FeaturizerConfig(operators=(HASH, HASH))

    def test_empty_operators_rejected(self):
        with pytest.raises(ValueError):
            FeaturizerConfig(operators=())


class TestConfigHash:
    def test_stable_for_identical_inputs(self, demo):
        catalog, _, _ = demo
        assert config_hash(catalog, FeaturizerConfig()) == config_hash(
            catalog, FeaturizerConfig()
        )

    def test_sensitive_to_flags_operators_and_catalog(self, demo, small_workload):
        catalog, _, _ = demo
        other_catalog, _ = small_workload
        base = config_hash(catalog, FeaturizerConfig())
        assert base != config_hash(catalog, FeaturizerConfig(include_graph_slots=False))
        assert base != config_hash(catalog, FeaturizerConfig(scale_by_selectivity=False))
        assert base != config_hash(catalog, FeaturizerConfig(operators=(HASH,)))
        assert base != config_hash(other_catalog, FeaturizerConfig())


class TestExplain:
    def test_segments_match_featurize_and_serialize(self, demo):
        catalog, query, g = demo
        action = JoinAction("Emp", "Pos", HASH)
        report = explain(catalog, query, g, action)
        vec = featurize(catalog, query, g, action)
        flat = (
            report["graph"] + report["left"] + report["right"] + report["operator"]
        )
        assert flat == list(vec)
        assert report["action"]["left"] == "Emp"
        assert report["action"]["operator"] == "HashJoin"
        json.dumps(report)  # must be JSON-serializable as-is
