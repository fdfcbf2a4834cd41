"""Single-predicate selectivity learning on a synthetic database.

The pipeline materializes relations whose numeric columns are drawn from
weighted Gaussian mixtures (string columns from finite vocabularies),
samples random predicates of the form ``relation.attribute <op> literal``,
labels each with its true reduction factor by scanning the stored values,
and fits regressors (least squares and a rectifier MLP) on one-hot/hashed
predicate features to predict those factors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Union

import numpy as np

from .enumerators import _stable_id
from .qlearner import (
    NonFiniteError,
    TrainConfig,
    forward_batch,
    init_network,
    loss_and_gradients,
)


class EmptySampleError(ValueError):
    """Fitting or evaluation was requested on an empty sample set."""


class PredicateOperator(Enum):
    """Comparison operators available in generated predicates."""

    EQ = "="
    NE = "!="
    GT = ">"
    GE = ">="
    LT = "<"
    LE = "<="


NUMERIC_OPERATORS: tuple[PredicateOperator, ...] = tuple(PredicateOperator)
STRING_OPERATORS: tuple[PredicateOperator, ...] = (
    PredicateOperator.EQ,
    PredicateOperator.NE,
)


# ---------------------------------------------------------------------------
# Schema and database generation


@dataclass(frozen=True)
class MixtureComponent:
    """One weighted Gaussian component of a numeric column's distribution."""

    weight: float
    mean: float
    std: float

    def __post_init__(self) -> None:
        if not (self.weight > 0 and math.isfinite(self.weight)):
            raise ValueError("component weight must be positive and finite")
        if not math.isfinite(self.mean):
            raise ValueError("component mean must be finite")
        if not (self.std >= 0 and math.isfinite(self.std)):
            raise ValueError("component std must be non-negative and finite")


@dataclass(frozen=True)
class NumericColumnSpec:
    """A numeric column drawn from a weighted Gaussian mixture."""

    name: str
    components: tuple[MixtureComponent, ...]

    def __post_init__(self) -> None:
        if not self.components:
            raise ValueError(f"column {self.name!r} needs at least one component")


@dataclass(frozen=True)
class StringColumnSpec:
    """A string column drawn from a finite vocabulary (optionally weighted)."""

    name: str
    vocabulary: tuple[str, ...]
    weights: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if not self.vocabulary:
            raise ValueError(f"column {self.name!r} needs a non-empty vocabulary")
        if self.weights is not None:
            if len(self.weights) != len(self.vocabulary):
                raise ValueError("one weight per vocabulary entry")
            if any(not (w > 0) for w in self.weights):
                raise ValueError("vocabulary weights must be positive")


ColumnSpec = Union[NumericColumnSpec, StringColumnSpec]


@dataclass(frozen=True)
class RelationSpec:
    """Declared cardinality and column distributions of one relation."""

    name: str
    rows: int
    columns: tuple[ColumnSpec, ...]

    def __post_init__(self) -> None:
        if self.rows < 1:
            raise ValueError("relations need at least one row")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate column names in relation {self.name!r}")


@dataclass(frozen=True)
class SchemaConfig:
    """The full synthetic-database schema."""

    relations: tuple[RelationSpec, ...]

    def __post_init__(self) -> None:
        names = [r.name for r in self.relations]
        if len(set(names)) != len(names):
            raise ValueError("duplicate relation names")


def default_schema() -> SchemaConfig:
    """Five relations, 21 attributes total: 15 numeric, 6 string."""

    def num(name: str, *components: tuple[float, float, float]) -> NumericColumnSpec:
        return NumericColumnSpec(
            name=name,
            components=tuple(MixtureComponent(w, m, s) for w, m, s in components),
        )

    return SchemaConfig(
        relations=(
            RelationSpec(
                name="customers",
                rows=3000,
                columns=(
                    num("age", (0.55, 34.0, 8.0), (0.45, 58.0, 11.0)),
                    num("income", (0.5, 42.0, 10.0), (0.3, 95.0, 20.0), (0.2, 160.0, 35.0)),
                    num("score", (1.0, 600.0, 90.0)),
                    StringColumnSpec(
                        name="region",
                        vocabulary=(
                            "north", "south", "east", "west",
                            "coast", "plains", "valley", "delta",
                        ),
                        weights=(5.0, 4.0, 3.0, 3.0, 2.0, 1.5, 1.0, 0.5),
                    ),
                    StringColumnSpec(
                        name="status",
                        vocabulary=("bronze", "silver", "gold", "platinum"),
                        weights=(8.0, 4.0, 2.0, 1.0),
                    ),
                ),
            ),
            RelationSpec(
                name="orders",
                rows=5000,
                columns=(
                    num("amount", (0.6, 25.0, 9.0), (0.3, 120.0, 30.0), (0.1, 480.0, 90.0)),
                    num("quantity", (0.8, 3.0, 1.2), (0.2, 14.0, 4.0)),
                    num("discount", (1.0, 0.12, 0.05)),
                    StringColumnSpec(
                        name="channel",
                        vocabulary=("web", "store", "phone", "partner", "kiosk"),
                        weights=(6.0, 4.0, 2.0, 1.0, 0.5),
                    ),
                ),
            ),
            RelationSpec(
                name="products",
                rows=2000,
                columns=(
                    num("price", (0.5, 9.0, 2.5), (0.35, 49.0, 12.0), (0.15, 210.0, 40.0)),
                    num("weight", (0.7, 1.4, 0.4), (0.3, 11.0, 3.0)),
                    num("rating", (0.6, 4.2, 0.4), (0.4, 2.9, 0.7)),
                    StringColumnSpec(
                        name="category",
                        vocabulary=("tools", "garden", "kitchen", "sports", "toys", "office"),
                    ),
                ),
            ),
            RelationSpec(
                name="suppliers",
                rows=1500,
                columns=(
                    num("lead_time", (0.65, 4.0, 1.5), (0.35, 18.0, 5.0)),
                    num("reliability", (1.0, 0.92, 0.05)),
                    num("capacity", (0.4, 120.0, 25.0), (0.4, 420.0, 60.0), (0.2, 1500.0, 250.0)),
                    StringColumnSpec(
                        name="country",
                        vocabulary=("ar", "br", "cn", "de", "jp", "mx", "us"),
                        weights=(1.0, 2.0, 6.0, 3.0, 2.5, 1.5, 5.0),
                    ),
                ),
            ),
            RelationSpec(
                name="shipments",
                rows=4000,
                columns=(
                    num("delay", (0.75, 1.0, 0.8), (0.25, 9.0, 3.0)),
                    num("cost", (0.5, 7.0, 2.0), (0.3, 24.0, 6.0), (0.2, 80.0, 15.0)),
                    num("distance", (0.6, 300.0, 120.0), (0.4, 2200.0, 500.0)),
                    StringColumnSpec(
                        name="carrier",
                        vocabulary=("hawk", "swift", "atlas", "nova", "polar"),
                        weights=(4.0, 3.0, 2.0, 1.0, 1.0),
                    ),
                ),
            ),
        )
    )


@dataclass(frozen=True)
class SynthColumn:
    """One materialized column: float64 values or fixed-width strings."""

    name: str
    values: np.ndarray
    is_numeric: bool


@dataclass(frozen=True)
class SynthRelation:
    """One materialized relation."""

    name: str
    rows: int
    columns: dict[str, SynthColumn]


@dataclass(frozen=True)
class SynthDatabase:
    """Materialized relations, keyed by name in schema order."""

    relations: dict[str, SynthRelation]

    def attributes(self) -> list[tuple[str, str]]:
        """(relation, attribute) pairs in deterministic schema order."""
        return [
            (rel_name, col_name)
            for rel_name, rel in self.relations.items()
            for col_name in rel.columns
        ]

    def column(self, relation: str, attribute: str) -> SynthColumn:
        return self.relations[relation].columns[attribute]


def _column_rng(seed: int, relation: str, column: str) -> np.random.Generator:
    return np.random.default_rng([seed, _stable_id(relation), _stable_id(column)])


def gen_database(schema: SchemaConfig, seed: int) -> SynthDatabase:
    """Materialize the schema; deterministic per seed, independent per column."""
    relations: dict[str, SynthRelation] = {}
    for rel_spec in schema.relations:
        columns: dict[str, SynthColumn] = {}
        for col_spec in rel_spec.columns:
            rng = _column_rng(seed, rel_spec.name, col_spec.name)
            if isinstance(col_spec, NumericColumnSpec):
                weights = np.array([c.weight for c in col_spec.components])
                means = np.array([c.mean for c in col_spec.components])
                stds = np.array([c.std for c in col_spec.components])
                idx = rng.choice(len(weights), size=rel_spec.rows, p=weights / weights.sum())
                values = rng.normal(means[idx], stds[idx])
                columns[col_spec.name] = SynthColumn(col_spec.name, values, True)
            else:
                p = None
                if col_spec.weights is not None:
                    w = np.array(col_spec.weights)
                    p = w / w.sum()
                values = rng.choice(np.asarray(col_spec.vocabulary), size=rel_spec.rows, p=p)
                columns[col_spec.name] = SynthColumn(col_spec.name, values, False)
        relations[rel_spec.name] = SynthRelation(rel_spec.name, rel_spec.rows, columns)
    return SynthDatabase(relations=relations)


# ---------------------------------------------------------------------------
# Predicates and their true reduction factors


@dataclass(frozen=True)
class PredicateSample:
    """One ``relation.attribute <op> literal`` predicate with its true factor."""

    relation: str
    attribute: str
    operator: PredicateOperator
    literal: float | str
    true_reduction_factor: float

    def __post_init__(self) -> None:
        if not isinstance(self.operator, PredicateOperator):
            raise ValueError("operator must be a PredicateOperator")
        if isinstance(self.literal, str):
            if self.operator not in STRING_OPERATORS:
                raise ValueError("string predicates support only = and !=")
        elif math.isnan(self.literal):
            raise ValueError("numeric literals must not be NaN")
        f = self.true_reduction_factor
        if not (0.0 <= f <= 1.0):
            raise ValueError(f"reduction factor {f} outside [0, 1]")


def reduction_factor(
    db: SynthDatabase,
    relation: str,
    attribute: str,
    operator: PredicateOperator,
    literal: float | str,
) -> float:
    """True selectivity of the predicate, by scanning the stored column."""
    col = db.column(relation, attribute)
    if col.is_numeric != (not isinstance(literal, str)):
        raise ValueError("literal type does not match the column type")
    if not col.is_numeric and operator not in STRING_OPERATORS:
        raise ValueError("string columns support only = and !=")
    v = col.values
    if operator is PredicateOperator.EQ:
        mask = v == literal
    elif operator is PredicateOperator.NE:
        mask = v != literal
    elif operator is PredicateOperator.GT:
        mask = v > literal
    elif operator is PredicateOperator.GE:
        mask = v >= literal
    elif operator is PredicateOperator.LT:
        mask = v < literal
    else:
        mask = v <= literal
    return float(np.count_nonzero(mask)) / len(v)


def gen_predicates(
    db: SynthDatabase,
    n_train: int = 1000,
    n_test: int = 2000,
    seed: int = 0,
) -> tuple[list[PredicateSample], list[PredicateSample]]:
    """Random single-attribute predicates, labeled by scanning the database.

    Attributes are drawn uniformly; literals are drawn from the column's own
    materialized values so equality predicates stay informative.
    """
    if n_train < 0 or n_test < 0:
        raise ValueError("sample counts must be non-negative")
    rng = np.random.default_rng([_stable_id("predicate-samples"), seed])
    attrs = db.attributes()
    samples: list[PredicateSample] = []
    for _ in range(n_train + n_test):
        relation, attribute = attrs[rng.integers(len(attrs))]
        col = db.column(relation, attribute)
        row = int(rng.integers(len(col.values)))
        if col.is_numeric:
            operator = NUMERIC_OPERATORS[rng.integers(len(NUMERIC_OPERATORS))]
            literal: float | str = float(col.values[row])
        else:
            operator = STRING_OPERATORS[rng.integers(len(STRING_OPERATORS))]
            literal = str(col.values[row])
        samples.append(
            PredicateSample(
                relation=relation,
                attribute=attribute,
                operator=operator,
                literal=literal,
                true_reduction_factor=reduction_factor(
                    db, relation, attribute, operator, literal
                ),
            )
        )
    return samples[:n_train], samples[n_train:]


# ---------------------------------------------------------------------------
# Featurization


def predicate_feature_dim(db: SynthDatabase, n_buckets: int = 64) -> int:
    """Width of predicate feature vectors for this database."""
    return len(db.attributes()) + len(PredicateOperator) + 1 + n_buckets


def featurize_predicate(
    db: SynthDatabase, sample: PredicateSample, n_buckets: int = 64
) -> np.ndarray:
    """one-hot(attribute) | one-hot(operator) | scaled numeric | string bucket.

    Numeric literals are min-max scaled by the column's materialized range
    and clamped to [0, 1] (constant columns map to 0.5); string literals set
    one of ``n_buckets`` stable-hash bucket slots instead.
    """
    if n_buckets < 1:
        raise ValueError("n_buckets must be positive")
    attrs = db.attributes()
    n_ops = len(PredicateOperator)
    vec = np.zeros(len(attrs) + n_ops + 1 + n_buckets, dtype=np.float64)
    vec[attrs.index((sample.relation, sample.attribute))] = 1.0
    vec[len(attrs) + NUMERIC_OPERATORS.index(sample.operator)] = 1.0
    col = db.column(sample.relation, sample.attribute)
    if isinstance(sample.literal, str):
        if col.is_numeric:
            raise ValueError("string literal on a numeric column")
        bucket = _stable_id(sample.literal) % n_buckets
        vec[len(attrs) + n_ops + 1 + bucket] = 1.0
    else:
        if not col.is_numeric:
            raise ValueError("numeric literal on a string column")
        lo = float(np.min(col.values))
        hi = float(np.max(col.values))
        if hi > lo:
            scaled = min(1.0, max(0.0, (float(sample.literal) - lo) / (hi - lo)))
        else:
            scaled = 0.5
        vec[len(attrs) + n_ops] = scaled
    return vec


# ---------------------------------------------------------------------------
# Regressors


class RegressorKind(Enum):
    """Models compared on the reduction-factor task."""

    LINEAR = "linear"
    MLP = "mlp"


@dataclass(frozen=True)
class SelestReport:
    """Losses of one fitted model, with predictions clamped to [0, 1]."""

    model: str
    train_mse: float
    test_mse: float
    train_mae: float
    test_mae: float
    n_train: int
    n_test: int

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "train_mse": self.train_mse,
            "test_mse": self.test_mse,
            "train_mae": self.train_mae,
            "test_mae": self.test_mae,
            "n_train": self.n_train,
            "n_test": self.n_test,
        }


def _design(X: np.ndarray) -> np.ndarray:
    return np.hstack([X, np.ones((X.shape[0], 1))])


def _fit_linear(X_train, y_train, X_test) -> tuple[np.ndarray, np.ndarray]:
    w, *_ = np.linalg.lstsq(_design(X_train), y_train, rcond=None)
    return _design(X_train) @ w, _design(X_test) @ w


def _fit_mlp(X_train, y_train, X_test, config: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    net = init_network(X_train.shape[1], config)
    rng = np.random.default_rng(config.seed)
    n = len(y_train)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.minibatch_size):
            idx = order[start : start + config.minibatch_size]
            loss, grad_w, grad_b = loss_and_gradients(net, X_train[idx], y_train[idx])
            if not math.isfinite(loss):
                raise NonFiniteError("regression training diverged")
            for i in range(len(net.weights)):
                net.weights[i] -= config.learning_rate * grad_w[i]
                net.biases[i] -= config.learning_rate * grad_b[i]
    return forward_batch(net, X_train), forward_batch(net, X_test)


def fit_and_evaluate(
    db: SynthDatabase,
    samples: tuple[Sequence[PredicateSample], Sequence[PredicateSample]],
    model: RegressorKind,
    *,
    n_buckets: int = 64,
    config: TrainConfig | None = None,
) -> SelestReport:
    """Fit one regressor on (train, test) predicate samples and report losses.

    Predictions are clamped to [0, 1] before any loss is computed. The MLP
    reuses the Q-network machinery (rectifier layers, minibatch SGD) on raw
    reduction-factor targets.
    """
    train, test = samples
    if not train or not test:
        raise EmptySampleError("both train and test sample sets must be non-empty")
    X_train = np.stack([featurize_predicate(db, s, n_buckets) for s in train])
    X_test = np.stack([featurize_predicate(db, s, n_buckets) for s in test])
    y_train = np.array([s.true_reduction_factor for s in train])
    y_test = np.array([s.true_reduction_factor for s in test])
    if model is RegressorKind.LINEAR:
        pred_train, pred_test = _fit_linear(X_train, y_train, X_test)
    else:
        cfg = config if config is not None else TrainConfig(epochs=200)
        pred_train, pred_test = _fit_mlp(X_train, y_train, X_test, cfg)
    pred_train = np.clip(pred_train, 0.0, 1.0)
    pred_test = np.clip(pred_test, 0.0, 1.0)
    return SelestReport(
        model=model.value,
        train_mse=float(np.mean((pred_train - y_train) ** 2)),
        test_mse=float(np.mean((pred_test - y_test) ** 2)),
        train_mae=float(np.mean(np.abs(pred_train - y_train))),
        test_mae=float(np.mean(np.abs(pred_test - y_test))),
        n_train=len(train),
        n_test=len(test),
    )
