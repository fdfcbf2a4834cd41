"""Fixed-length numeric encodings of (query graph, candidate join) pairs.

A state-action pair is encoded over the catalog's attribute vocabulary as

    [ graph slots | left slots | right slots | operator one-hot ]

with one slot per catalog attribute in each of the first three segments.
Graph slots mark the attributes visible anywhere in the current graph and
are scaled by single-table predicate selectivity where the query filters an
attribute; the side segments are plain 0/1 indicators of the attributes
visible on each side of the candidate join; the tail one-hot encodes the
join operator. Vector length is therefore 3 * num_attributes + n_operators.

Everything here is a pure function of its arguments and safe to call
concurrently. The two boolean switches on FeaturizerConfig exist for
ablation studies: one zeroes the whole graph segment, the other drops
predicate scaling while keeping visibility indicators.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .catalog import Catalog, UnknownAttributeError
from .querygraph import JoinAction, JoinOperator, Query, QueryGraph

DEFAULT_OPERATORS: tuple[JoinOperator, ...] = (
    JoinOperator.HASH_JOIN,
    JoinOperator.INDEX_JOIN,
)


@dataclass(frozen=True)
class FeaturizerConfig:
    """Operator vocabulary and ablation switches for featurization."""

    operators: tuple[JoinOperator, ...] = DEFAULT_OPERATORS
    include_graph_slots: bool = True
    scale_by_selectivity: bool = True

    def __post_init__(self) -> None:
        if not self.operators:
            raise ValueError("operator vocabulary must not be empty")
        if len(set(self.operators)) != len(self.operators):
            raise ValueError("operator vocabulary contains duplicates")


DEFAULT_CONFIG = FeaturizerConfig()


def feature_dim(catalog: Catalog, n_ops: int) -> int:
    """Length of every vector emitted for this catalog and operator count."""
    if n_ops < 1:
        raise ValueError("need at least one operator slot")
    return 3 * catalog.num_attributes + n_ops


def config_hash(catalog: Catalog, config: FeaturizerConfig = DEFAULT_CONFIG) -> str:
    """Stable digest of everything that determines vector layout and values.

    Stored in model checkpoints so a network is never applied to vectors
    laid out differently from its training data.
    """
    payload = {
        "attributes": sorted(catalog.attribute_index.items()),
        "operators": [op.value for op in config.operators],
        "include_graph_slots": config.include_graph_slots,
        "scale_by_selectivity": config.scale_by_selectivity,
    }
    blob = json.dumps(payload, separators=(",", ":"), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _attribute_indicator(catalog: Catalog, attribute_ids) -> np.ndarray:
    n = catalog.num_attributes
    out = np.zeros(n, dtype=np.float64)
    for attr_id in attribute_ids:
        if not 0 <= attr_id < n:
            raise UnknownAttributeError(
                f"attribute id {attr_id} outside catalog range [0, {n})"
            )
        out[attr_id] = 1.0
    return out


def selection_scaling(catalog: Catalog, query: Query) -> dict[int, float]:
    """Per-attribute product of the query's single-table predicate
    selectivities, keyed by catalog attribute id."""
    scaling: dict[int, float] = {}
    for s in query.selections:
        attr_id = catalog.attribute_id(s.relation, s.attribute)
        scaling[attr_id] = scaling.get(attr_id, 1.0) * s.selectivity
    return scaling


def graph_slots(
    catalog: Catalog,
    query: Query,
    g: QueryGraph,
    config: FeaturizerConfig = DEFAULT_CONFIG,
) -> np.ndarray:
    """The whole-graph segment: visibility indicators, predicate-scaled."""
    if not config.include_graph_slots:
        return np.zeros(catalog.num_attributes, dtype=np.float64)
    visible: set[int] = set()
    for vertex in g.vertices.values():
        visible.update(vertex.visible_attributes)
    slots = _attribute_indicator(catalog, sorted(visible))
    if config.scale_by_selectivity:
        for attr_id, sel in selection_scaling(catalog, query).items():
            slots[attr_id] *= sel
    return slots


def side_slots(catalog: Catalog, g: QueryGraph, vertex_id: str) -> np.ndarray:
    """0/1 indicator of the attributes visible on one side of a join."""
    return _attribute_indicator(catalog, g.vertex(vertex_id).visible_attributes)


def _operator_one_hot(config: FeaturizerConfig, operator: JoinOperator) -> np.ndarray:
    out = np.zeros(len(config.operators), dtype=np.float64)
    try:
        out[config.operators.index(operator)] = 1.0
    except ValueError:
        raise ValueError(
            f"operator {operator.value} not in vocabulary "
            f"{[op.value for op in config.operators]}"
        ) from None
    return out


def featurize(
    catalog: Catalog,
    query: Query,
    g: QueryGraph,
    action: JoinAction,
    config: FeaturizerConfig = DEFAULT_CONFIG,
) -> np.ndarray:
    """Encode one candidate join in one graph state as a flat float vector."""
    return np.concatenate(
        [
            graph_slots(catalog, query, g, config),
            side_slots(catalog, g, action.left),
            side_slots(catalog, g, action.right),
            _operator_one_hot(config, action.operator),
        ]
    )


def featurize_actions(
    catalog: Catalog,
    query: Query,
    g: QueryGraph,
    actions: list[JoinAction],
    config: FeaturizerConfig = DEFAULT_CONFIG,
) -> np.ndarray:
    """Encode several candidates of the same graph state as a 2-D batch.

    The graph segment is computed once and shared across rows, so this is
    the cheap way to featurize a planning step's whole candidate set.
    """
    dim = feature_dim(catalog, len(config.operators))
    batch = np.zeros((len(actions), dim), dtype=np.float64)
    if not actions:
        return batch
    gseg = graph_slots(catalog, query, g, config)
    n = catalog.num_attributes
    sides: dict[str, np.ndarray] = {}
    for row, action in enumerate(actions):
        for vertex_id in (action.left, action.right):
            if vertex_id not in sides:
                sides[vertex_id] = side_slots(catalog, g, vertex_id)
        batch[row, :n] = gseg
        batch[row, n : 2 * n] = sides[action.left]
        batch[row, 2 * n : 3 * n] = sides[action.right]
        batch[row, 3 * n :] = _operator_one_hot(config, action.operator)
    return batch


def explain(
    catalog: Catalog,
    query: Query,
    g: QueryGraph,
    action: JoinAction,
    config: FeaturizerConfig = DEFAULT_CONFIG,
) -> dict:
    """JSON-ready breakdown of one featurization, for debugging CLIs."""
    vec = featurize(catalog, query, g, action, config)
    n = catalog.num_attributes
    return {
        "action": {
            "left": action.left,
            "right": action.right,
            "operator": action.operator.value,
        },
        "attribute_names": [
            name
            for name, _ in sorted(
                catalog.attribute_index.items(), key=lambda kv: kv[1]
            )
        ],
        "graph": list(vec[:n]),
        "left": list(vec[n : 2 * n]),
        "right": list(vec[2 * n : 3 * n]),
        "operator": list(vec[3 * n :]),
    }
