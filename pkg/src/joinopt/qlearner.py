"""The learned planner: a small MLP that scores candidate joins.

The network regresses the cumulative cost of the best complete plan that
takes a given candidate join in a given graph state. Planning is then a
greedy walk: featurize every candidate of the current graph, score the
whole batch in one forward pass, take the cheapest-looking join, repeat.

Labels are log-scaled (costs span many orders of magnitude) and
standardized; the network stores its normalization constants and the
digest of the featurization scheme it was trained under, and refuses to
plan when that digest does not match the catalog at hand.

Fine-tuning adapts a trained network to observed execution feedback: the
hidden layers are frozen as a learned representation and only the output
layer is re-initialized and retrained on the observed totals.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .catalog import Catalog
from .costmodel import CostModelSpec
from .enumerators import (
    INF,
    TrainingTuple,
    _GraphSearch,
    _graph_subset_dp,
    _note,
    _oriented_candidates,
    _PlanBuilder,
    _require_connected,
    _single_relation_plan,
    _stable_id,
)
from .featurizer import (
    DEFAULT_CONFIG,
    FeaturizerConfig,
    config_hash,
    feature_dim,
    featurize,
    featurize_actions,
)
from .querygraph import JoinAction, Plan, Query, QueryGraph, apply_join

__all__ = [
    "LabelMode",
    "TrainConfig",
    "QNetwork",
    "DimensionMismatchError",
    "EmptyDatasetError",
    "FeaturizerMismatchError",
    "MissingLabelError",
    "NonFiniteError",
    "init_network",
    "parameter_count",
    "forward_batch",
    "denormalize_cost",
    "make_labels",
    "train",
    "loss_and_gradients",
    "gradient_check",
    "plan_with_q",
    "finetune",
    "collect_candidate_training",
    "collect_runtime_tuples",
    "save_network",
    "load_network",
]


class DimensionMismatchError(ValueError):
    """Input vectors do not match the network's input dimension."""


class FeaturizerMismatchError(ValueError):
    """The network was trained under a different featurization scheme."""


class MissingLabelError(ValueError):
    """A training observation lacks the cumulative cost its mode needs."""


class EmptyDatasetError(ValueError):
    """Training requires at least one observation."""


class NonFiniteError(FloatingPointError):
    """Training produced NaN or infinite values (learning rate too high)."""


class LabelMode(Enum):
    """How regression targets are derived from observations.

    FINAL_COST uses each observation's stored cumulative plan cost.
    BOOTSTRAP uses the step cost plus the network's own cheapest estimate
    over the successor state's candidates (zero at terminal states).
    """

    FINAL_COST = "final_cost"
    BOOTSTRAP = "bootstrap"


@dataclass(frozen=True)
class TrainConfig:
    """Network layout and optimization hyperparameters."""

    hidden_sizes: tuple[int, ...] = (256, 256)
    learning_rate: float = 0.05
    minibatch_size: int = 64
    epochs: int = 80
    seed: int = 0
    label_mode: LabelMode = LabelMode.FINAL_COST

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes)
        )
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden layer sizes must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.minibatch_size < 1:
            raise ValueError("minibatch_size must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be positive")


@dataclass
class QNetwork:
    """Fully-connected scorer: input -> hidden layers (rectified) -> scalar.

    weights[i] has shape (fan_in, fan_out); biases[i] has shape (fan_out,).
    Outputs live in normalized label space; mu and sigma map them back to
    raw costs (see denormalize_cost). featurizer_hash records the
    featurization scheme the parameters were trained under.
    """

    input_dim: int
    hidden_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    mu: float = 0.0
    sigma: float = 1.0
    featurizer_hash: str | None = None


def _layer_dims(input_dim: int, hidden_sizes: Sequence[int]) -> list[int]:
    return [input_dim, *hidden_sizes, 1]


def _validate_network(net: QNetwork) -> None:
    dims = _layer_dims(net.input_dim, net.hidden_sizes)
    if net.input_dim < 1:
        raise ValueError("network input dimension must be positive")
    if len(net.weights) != len(dims) - 1 or len(net.biases) != len(dims) - 1:
        raise ValueError("layer count does not match the declared layout")
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
            raise ValueError(
                f"layer {i} has shape {w.shape}/{b.shape}, "
                f"expected {(dims[i], dims[i + 1])}/{(dims[i + 1],)}"
            )
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError(f"layer {i} contains non-finite parameters")
    if not (np.isfinite(net.mu) and np.isfinite(net.sigma) and net.sigma > 0):
        raise ValueError("normalization constants must be finite, sigma > 0")


def init_network(
    input_dim: int, config: TrainConfig, *, featurizer_hash: str | None = None
) -> QNetwork:
    """A fresh network: weights uniform in +-1/sqrt(fan_in), biases zero."""
    if input_dim < 1:
        raise ValueError("network input dimension must be positive")
    rng = np.random.default_rng(config.seed)
    dims = _layer_dims(input_dim, config.hidden_sizes)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims, dims[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
        biases.append(np.zeros(fan_out, dtype=np.float64))
    net = QNetwork(
        input_dim=input_dim,
        hidden_sizes=tuple(config.hidden_sizes),
        weights=weights,
        biases=biases,
        featurizer_hash=featurizer_hash,
    )
    _validate_network(net)
    return net


def parameter_count(net: QNetwork) -> int:
    return sum(w.size for w in net.weights) + sum(b.size for b in net.biases)


def _clone(net: QNetwork) -> QNetwork:
    return QNetwork(
        input_dim=net.input_dim,
        hidden_sizes=tuple(net.hidden_sizes),
        weights=[w.copy() for w in net.weights],
        biases=[b.copy() for b in net.biases],
        mu=net.mu,
        sigma=net.sigma,
        featurizer_hash=net.featurizer_hash,
    )


# ---------------------------------------------------------------------------
# Forward and backward passes


def forward_batch(net: QNetwork, batch) -> np.ndarray:
    """Score a batch of feature vectors; returns one scalar per row.

    Each row is accumulated input-slot by input-slot in a fixed order, so
    a row's result is bit-identical whether it is scored alone or inside
    any batch (argmin decisions never depend on how candidates were
    grouped).
    """
    X = np.asarray(batch, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise DimensionMismatchError(
            f"expected a batch of shape (n, {net.input_dim}), got {X.shape}"
        )
    h = X
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        out = np.broadcast_to(b, (h.shape[0], b.shape[0])).copy()
        for j in range(h.shape[1]):
            out += h[:, j : j + 1] * w[j]
        h = np.maximum(out, 0.0) if i < last else out
    return h[:, 0]


def _forward_stored(net: QNetwork, X: np.ndarray):
    """Vectorized forward pass keeping per-layer values for backprop."""
    pre: list[np.ndarray] = []
    acts: list[np.ndarray] = [X]
    h = X
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < last else z
        acts.append(h)
    return pre, acts


def _loss_only(net: QNetwork, X: np.ndarray, y: np.ndarray) -> float:
    _, acts = _forward_stored(net, X)
    r = acts[-1][:, 0] - y
    return float(np.mean(r * r))


def loss_and_gradients(net: QNetwork, batch, targets):
    """Mean squared error and its gradients for every layer.

    Targets are in the network's output space (normalized labels during
    training). Returns (loss, weight gradients, bias gradients) with the
    gradient lists parallel to net.weights / net.biases.
    """
    X = np.asarray(batch, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise DimensionMismatchError(
            f"expected a batch of shape (n, {net.input_dim}), got {X.shape}"
        )
    pre, acts = _forward_stored(net, X)
    residual = acts[-1][:, 0] - y
    n = max(1, len(residual))
    loss = float(np.mean(residual * residual)) if len(residual) else 0.0
    delta = (2.0 / n) * residual[:, None]
    grad_w: list[np.ndarray] = []
    grad_b: list[np.ndarray] = []
    for i in reversed(range(len(net.weights))):
        grad_w.append(acts[i].T @ delta)
        grad_b.append(delta.sum(axis=0))
        if i > 0:
            delta = (delta @ net.weights[i].T) * (pre[i - 1] > 0.0)
    return loss, grad_w[::-1], grad_b[::-1]


def gradient_check(net: QNetwork, batch, targets, *, step: float = 1e-5) -> float:
    """Largest relative disagreement between analytic gradients and central
    finite differences over every parameter (relative to max(1, |grad|))."""
    X = np.asarray(batch, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    _, grad_w, grad_b = loss_and_gradients(net, X, y)
    probe = _clone(net)
    worst = 0.0
    for arrays, grads in ((probe.weights, grad_w), (probe.biases, grad_b)):
        for arr, grad in zip(arrays, grads):
            flat = arr.ravel()
            gflat = np.asarray(grad).ravel()
            for k in range(flat.size):
                saved = flat[k]
                flat[k] = saved + step
                up = _loss_only(probe, X, y)
                flat[k] = saved - step
                down = _loss_only(probe, X, y)
                flat[k] = saved
                numeric = (up - down) / (2.0 * step)
                denom = max(1.0, abs(numeric), abs(gflat[k]))
                worst = max(worst, abs(numeric - gflat[k]) / denom)
    return worst


# ---------------------------------------------------------------------------
# Label normalization


def denormalize_cost(net: QNetwork, value):
    """Map network output back to a raw cost (clamped at zero).

    Training regresses z = (log10(1 + cost) - mu) / sigma, so the inverse
    is 10^(z * sigma + mu) - 1. With the default constants a zero output
    is exactly a zero cost.
    """
    raw = np.power(10.0, np.asarray(value) * net.sigma + net.mu) - 1.0
    return np.maximum(raw, 0.0)


def _fit_normalization(transformed: np.ndarray) -> tuple[float, float]:
    mu = float(np.mean(transformed))
    sigma = float(np.std(transformed))
    if not sigma > 1e-12:  # constant labels: center only
        sigma = 1.0
    return mu, sigma


def _log_scale(y_raw: np.ndarray) -> np.ndarray:
    if np.any(y_raw < 0):
        raise ValueError("cost labels must be non-negative")
    return np.log10(1.0 + y_raw)


# ---------------------------------------------------------------------------
# Featurizing observations


def _query_map(queries) -> dict[str, Query]:
    if isinstance(queries, Mapping):
        return dict(queries)
    return {q.query_id: q for q in queries}


def _lookup_query(qmap: dict[str, Query], query_id: str) -> Query:
    try:
        return qmap[query_id]
    except KeyError:
        raise KeyError(
            f"observation references query {query_id!r}, which was not "
            "among the queries provided"
        ) from None


def _tuple_features(
    catalog: Catalog,
    qmap: dict[str, Query],
    tuples: Sequence[TrainingTuple],
    features: FeaturizerConfig,
) -> np.ndarray:
    dim = feature_dim(catalog, len(features.operators))
    X = np.empty((len(tuples), dim), dtype=np.float64)
    for i, t in enumerate(tuples):
        query = _lookup_query(qmap, t.graph_before.query_id)
        X[i] = featurize(catalog, query, t.graph_before, t.action, features)
    return X


def _final_cost_labels(tuples: Sequence[TrainingTuple]) -> np.ndarray:
    y = np.empty(len(tuples), dtype=np.float64)
    for i, t in enumerate(tuples):
        if t.long_term_cost is None:
            raise MissingLabelError(
                "observation has no cumulative cost; collect traces with "
                "long-term labels or use the bootstrap mode"
            )
        y[i] = t.long_term_cost
    return y


class _BootstrapContext:
    """Successor-candidate features for each observation, computed once so
    labels can be re-derived from the evolving network each epoch."""

    def __init__(
        self,
        catalog: Catalog,
        qmap: dict[str, Query],
        tuples: Sequence[TrainingTuple],
        spec: CostModelSpec,
        features: FeaturizerConfig,
    ):
        searches: dict[str, _GraphSearch] = {}
        self.step_costs = np.array(
            [t.incremental_cost for t in tuples], dtype=np.float64
        )
        self.successors: list[np.ndarray | None] = []
        for t in tuples:
            if len(t.graph_after.vertices) <= 1:
                self.successors.append(None)
                continue
            qid = t.graph_before.query_id
            query = _lookup_query(qmap, qid)
            search = searches.get(qid)
            if search is None:
                search = searches[qid] = _GraphSearch(catalog, query, spec)
            candidates = _step_candidates(search, t.graph_after)
            if not candidates:
                raise ValueError(
                    f"state after joining {t.action.left} and {t.action.right} "
                    "has no candidate joins; was the trace collected with "
                    "Cartesian products?"
                )
            self.successors.append(
                featurize_actions(
                    catalog, query, t.graph_after,
                    [c[0] for c in candidates], features,
                )
            )

    def labels(self, net: QNetwork) -> np.ndarray:
        y = self.step_costs.copy()
        for i, X_next in enumerate(self.successors):
            if X_next is not None:
                estimates = denormalize_cost(net, forward_batch(net, X_next))
                y[i] += float(np.min(estimates))
        return y


def make_labels(
    catalog: Catalog,
    queries,
    tuples: Iterable[TrainingTuple],
    net: QNetwork | None = None,
    mode: LabelMode = LabelMode.FINAL_COST,
    *,
    spec: CostModelSpec | None = None,
    features: FeaturizerConfig = DEFAULT_CONFIG,
) -> tuple[np.ndarray, np.ndarray]:
    """Regression pairs (feature matrix, raw cost targets) for a trace."""
    tuples = list(tuples)
    qmap = _query_map(queries)
    X = _tuple_features(catalog, qmap, tuples, features)
    if mode is LabelMode.FINAL_COST:
        return X, _final_cost_labels(tuples)
    if net is None or spec is None:
        raise ValueError("bootstrap labels need the network and the cost model")
    ctx = _BootstrapContext(catalog, qmap, tuples, spec, features)
    return X, ctx.labels(net)


# ---------------------------------------------------------------------------
# Training


def train(
    net: QNetwork,
    catalog: Catalog,
    queries,
    tuples: Iterable[TrainingTuple],
    config: TrainConfig,
    *,
    spec: CostModelSpec | None = None,
    features: FeaturizerConfig = DEFAULT_CONFIG,
) -> tuple[QNetwork, list[float]]:
    """Minibatch SGD on squared error; returns (trained copy, epoch losses).

    Labels are log-scaled and standardized with constants fitted here and
    stored on the returned network. In bootstrap mode the raw targets are
    re-derived from the evolving network before each epoch (the constants
    stay fixed); `spec` is required then. The input network is not
    modified, and the result is stamped with this catalog's featurizer
    digest.
    """
    tuples = list(tuples)
    if not tuples:
        raise EmptyDatasetError("no training observations")
    qmap = _query_map(queries)
    expected = feature_dim(catalog, len(features.operators))
    if net.input_dim != expected:
        raise DimensionMismatchError(
            f"network expects {net.input_dim} inputs, catalog featurizes "
            f"to {expected}"
        )
    X = _tuple_features(catalog, qmap, tuples, features)

    out = _clone(net)
    bootstrap = None
    if config.label_mode is LabelMode.BOOTSTRAP:
        if spec is None:
            raise ValueError("bootstrap training needs the cost model spec")
        bootstrap = _BootstrapContext(catalog, qmap, tuples, spec, features)
        y_raw = bootstrap.labels(out)
    else:
        y_raw = _final_cost_labels(tuples)
    out.mu, out.sigma = _fit_normalization(_log_scale(y_raw))
    targets = (_log_scale(y_raw) - out.mu) / out.sigma

    rng = np.random.default_rng(config.seed)
    losses: list[float] = []
    for epoch in range(config.epochs):
        if epoch > 0 and bootstrap is not None:
            targets = (_log_scale(bootstrap.labels(out)) - out.mu) / out.sigma
        order = rng.permutation(len(tuples))
        epoch_losses = []
        for start in range(0, len(order), config.minibatch_size):
            idx = order[start : start + config.minibatch_size]
            loss, grad_w, grad_b = loss_and_gradients(out, X[idx], targets[idx])
            if not np.isfinite(loss):
                raise NonFiniteError(
                    f"loss diverged in epoch {epoch}; lower the learning rate"
                )
            for i in range(len(out.weights)):
                out.weights[i] -= config.learning_rate * grad_w[i]
                out.biases[i] -= config.learning_rate * grad_b[i]
            epoch_losses.append(loss)
        losses.append(float(np.mean(epoch_losses)))
    _validate_network(out)
    out.featurizer_hash = config_hash(catalog, features)
    return out, losses


def finetune(
    net: QNetwork,
    catalog: Catalog,
    queries,
    tuples: Iterable[TrainingTuple],
    config: TrainConfig,
    *,
    features: FeaturizerConfig = DEFAULT_CONFIG,
) -> QNetwork:
    """Adapt a trained network to observed totals, touching only the output.

    The hidden layers are kept bit-for-bit (they encode what the network
    learned from the cost model); the output layer is re-initialized from
    the config seed and, when observations are given, retrained on their
    stored totals with fresh normalization constants. With no observations
    the re-initialized network is returned as-is.
    """
    out = _clone(net)
    rng = np.random.default_rng(config.seed)
    fan_in = out.weights[-1].shape[0]
    bound = 1.0 / math.sqrt(fan_in)
    out.weights[-1] = rng.uniform(-bound, bound, out.weights[-1].shape)
    out.biases[-1] = np.zeros_like(out.biases[-1])
    tuples = list(tuples)
    if not tuples:
        return out

    qmap = _query_map(queries)
    X = _tuple_features(catalog, qmap, tuples, features)
    y_raw = _final_cost_labels(tuples)
    out.mu, out.sigma = _fit_normalization(_log_scale(y_raw))
    targets = (_log_scale(y_raw) - out.mu) / out.sigma

    # Hidden layers are frozen, so their activations are a fixed design
    # matrix; only the affine output layer is optimized.
    hidden = X
    for i in range(len(out.weights) - 1):
        hidden = np.maximum(hidden @ out.weights[i] + out.biases[i], 0.0)

    w = out.weights[-1]
    b = out.biases[-1]
    for epoch in range(config.epochs):
        order = rng.permutation(len(tuples))
        for start in range(0, len(order), config.minibatch_size):
            idx = order[start : start + config.minibatch_size]
            residual = hidden[idx] @ w[:, 0] + b[0] - targets[idx]
            loss = float(np.mean(residual * residual))
            if not np.isfinite(loss):
                raise NonFiniteError(
                    f"loss diverged in epoch {epoch}; lower the learning rate"
                )
            scale = 2.0 / len(idx)
            w[:, 0] -= config.learning_rate * scale * (hidden[idx].T @ residual)
            b[0] -= config.learning_rate * scale * residual.sum()
    _validate_network(out)
    out.featurizer_hash = config_hash(catalog, features)
    return out


# ---------------------------------------------------------------------------
# Candidate enumeration shared by inference and trace collection


def _step_candidates(
    search: _GraphSearch, g: QueryGraph
) -> list[tuple[JoinAction, float, float, bool]]:
    """One costed candidate per (vertex pair, operator).

    Both orientations of a pair merge into the identical vertex, so every
    later cost is unchanged and the cheaper immediate orientation dominates
    the other; it is kept as the pair's representative (ties broken by the
    action's canonical order). This keeps the number of network evaluations
    per state at (adjacent pairs) x (operators).
    """
    groups: dict[tuple, tuple] = {}
    for action in _oriented_candidates(g, search.ops_for):
        inc, sel, reuse = search.action_cost(g, action)
        key = (frozenset((action.left, action.right)), action.operator)
        entry = (inc, action.sort_key(), action, sel, reuse)
        kept = groups.get(key)
        if kept is None or entry[:2] < kept[:2]:
            groups[key] = entry
    chosen = [
        (action, inc, sel, reuse)
        for inc, _, action, sel, reuse in groups.values()
    ]
    chosen.sort(key=lambda item: item[0].sort_key())
    return chosen


def _check_featurization(
    net: QNetwork, catalog: Catalog, spec: CostModelSpec,
    features: FeaturizerConfig,
) -> None:
    expected = feature_dim(catalog, len(features.operators))
    if net.input_dim != expected:
        raise DimensionMismatchError(
            f"network expects {net.input_dim} inputs but this catalog "
            f"featurizes to {expected}"
        )
    if net.featurizer_hash is not None:
        current = config_hash(catalog, features)
        if net.featurizer_hash != current:
            raise FeaturizerMismatchError(
                "network was trained under a different featurization "
                "scheme; refusing to plan with misaligned vectors"
            )
    missing = [op for op in spec.operators if op not in features.operators]
    if missing:
        raise ValueError(
            "featurizer vocabulary lacks operators the cost model can "
            f"choose: {[op.value for op in missing]}"
        )


# ---------------------------------------------------------------------------
# Greedy inference


def plan_with_q(
    net: QNetwork,
    catalog: Catalog,
    query: Query,
    spec: CostModelSpec,
    *,
    features: FeaturizerConfig = DEFAULT_CONFIG,
    stats: dict | None = None,
) -> Plan:
    """Plan by repeatedly taking the candidate the network scores cheapest.

    Each step featurizes every candidate of the current graph and scores
    them in a single batched forward pass; ties break by the action's
    canonical order. stats records q_evals (scored candidates),
    forward_batches, and cost_evals (cost-model evaluations for plan
    bookkeeping).
    """
    _check_featurization(net, catalog, spec, features)
    search = _GraphSearch(catalog, query, spec)
    if len(search.g0.vertices) == 1:
        _note(stats, cost_evals=0, q_evals=0, forward_batches=0, backend="graph")
        return _single_relation_plan(search.g0, query.query_id)
    _require_connected(search.g0)
    builder = _PlanBuilder(search.g0)
    q_evals = 0
    batches = 0
    while len(builder.g.vertices) > 1:
        candidates = _step_candidates(search, builder.g)
        X = featurize_actions(
            catalog, query, builder.g, [c[0] for c in candidates], features
        )
        scores = forward_batch(net, X)
        q_evals += len(candidates)
        batches += 1
        best = min(
            range(len(candidates)),
            key=lambda i: (scores[i], candidates[i][0].sort_key()),
        )
        action, inc, sel, reuse = candidates[best]
        builder.apply(action, inc, sel, reuse)
    _note(
        stats,
        cost_evals=search.evals,
        q_evals=q_evals,
        forward_batches=batches,
        backend="graph",
    )
    return builder.finish(query.query_id)


# ---------------------------------------------------------------------------
# Trace collectors


def collect_candidate_training(
    catalog: Catalog, query: Query, spec: CostModelSpec
) -> list[TrainingTuple]:
    """Exact targets for every candidate along one optimal contraction.

    Walks the query from its initial graph to a single vertex, always
    taking an optimal join. At each visited state, every candidate (as the
    greedy planner would enumerate it) yields one observation labeled with
    the total cost of the best complete plan that takes that candidate
    next: cost so far + step cost + optimal completion of the successor
    state. These are the values the planner's greedy argmin needs, so a
    network that fits them reproduces the optimal plan on this query.

    Completion costs come from a subset dynamic program over the remaining
    vertices, so queries are limited to 16 relations.
    """
    search = _GraphSearch(catalog, query, spec)
    if len(search.g0.vertices) < 2:
        return []
    if len(search.g0.vertices) > 16:
        raise ValueError(
            "exact candidate labeling is limited to 16 relations "
            f"(query has {len(search.g0.vertices)})"
        )
    _require_connected(search.g0)
    out: list[TrainingTuple] = []
    g = search.g0
    prefix = 0.0
    while len(g.vertices) > 1:
        best_key = None
        best: tuple[JoinAction, float, QueryGraph] | None = None
        for action, inc, sel, reuse in _step_candidates(search, g):
            g_next = apply_join(g, action)
            if len(g_next.vertices) == 1:
                completion = 0.0
            else:
                table = _graph_subset_dp(g_next, search.g0, spec, search.ops_for)
                completion = table.best[table.full_mask]
            if completion == INF:
                continue
            label = (prefix + inc) + completion
            out.append(TrainingTuple(g, action, g_next, inc, label))
            key = (label, action.sort_key())
            if best_key is None or key < best_key:
                best_key = key
                best = (action, inc, g_next)
        if best is None:
            raise ValueError(f"no completable candidate in {g.query_id!r}")
        action, inc, g_next = best
        prefix += inc
        g = g_next
    return out


def collect_runtime_tuples(
    net: QNetwork,
    catalog: Catalog,
    query: Query,
    spec: CostModelSpec,
    oracle,
    *,
    episodes: int = 4,
    epsilon: float = 0.25,
    seed: int = 0,
    features: FeaturizerConfig = DEFAULT_CONFIG,
) -> list[TrainingTuple]:
    """Execution-feedback observations for fine-tuning.

    Runs the network's plan once as-is, then further episodes that replace
    the network's choice with a random candidate with probability epsilon
    per step. Every finished plan is scored by the oracle (anything with a
    score_plan(plan) method, e.g. a perturbed cost model standing in for
    real execution), and each of its steps is labeled with that observed
    total.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if episodes < 1:
        raise ValueError("need at least one episode")
    _check_featurization(net, catalog, spec, features)
    search = _GraphSearch(catalog, query, spec)
    if len(search.g0.vertices) < 2:
        return []
    _require_connected(search.g0)
    rng = np.random.default_rng([seed, _stable_id(query.query_id)])
    out: list[TrainingTuple] = []
    for episode in range(episodes):
        explore = 0.0 if episode == 0 else epsilon
        builder = _PlanBuilder(search.g0)
        steps: list[tuple[QueryGraph, JoinAction, QueryGraph, float]] = []
        while len(builder.g.vertices) > 1:
            candidates = _step_candidates(search, builder.g)
            if explore > 0.0 and rng.random() < explore:
                pick = int(rng.integers(len(candidates)))
            else:
                X = featurize_actions(
                    catalog, query, builder.g,
                    [c[0] for c in candidates], features,
                )
                scores = forward_batch(net, X)
                pick = min(
                    range(len(candidates)),
                    key=lambda i: (scores[i], candidates[i][0].sort_key()),
                )
            action, inc, sel, reuse = candidates[pick]
            before = builder.g
            builder.apply(action, inc, sel, reuse)
            steps.append((before, action, builder.g, inc))
        observed = float(oracle.score_plan(builder.finish(query.query_id)))
        out.extend(
            TrainingTuple(before, action, after, inc, observed)
            for before, action, after, inc in steps
        )
    return out


# ---------------------------------------------------------------------------
# Checkpoints


def save_network(net: QNetwork, path: str) -> None:
    """Write a JSON checkpoint (exact float round-trip via repr)."""
    _validate_network(net)
    obj = {
        "input_dim": net.input_dim,
        "hidden_sizes": list(net.hidden_sizes),
        "layout": _layer_dims(net.input_dim, net.hidden_sizes),
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "normalization": {"mu": net.mu, "sigma": net.sigma},
        "featurizer_hash": net.featurizer_hash,
    }
    with open(path, "w") as fh:
        json.dump(obj, fh)


def load_network(path: str) -> QNetwork:
    with open(path) as fh:
        obj = json.load(fh)
    try:
        norm = obj.get("normalization", {})
        net = QNetwork(
            input_dim=int(obj["input_dim"]),
            hidden_sizes=tuple(int(h) for h in obj["hidden_sizes"]),
            weights=[np.asarray(w, dtype=np.float64) for w in obj["weights"]],
            biases=[np.asarray(b, dtype=np.float64) for b in obj["biases"]],
            mu=float(norm.get("mu", 0.0)),
            sigma=float(norm.get("sigma", 1.0)),
            featurizer_hash=obj.get("featurizer_hash"),
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed network checkpoint: {exc}") from exc
    _validate_network(net)
    return net
