"""Categorical feature extraction and a from-scratch random forest.

The 14 startup categories are extracted by an LLM against fixed
enumerations, ordinally encoded (with a trailing Mismatch code for anything
outside the enumeration), and fed to CART trees grown on bootstrap resamples
with Gini impurity and per-node feature subsampling.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, fields as dataclass_fields
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from ssff import prompts
from ssff.domain import Outcome, StartupRecord
from ssff.llm_gateway import (
    ChatRequest,
    CORRECTIVE_JSON_SUFFIX,
    Gateway,
    extract_first_json,
    render,
)

logger = logging.getLogger(__name__)


class SingleClass(ValueError):
    pass


class EmptyData(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class RatioViolation(ValueError):
    pass


# ---------------------------------------------------------------------------
# Categorical features and ordinal encoding
# ---------------------------------------------------------------------------

MISMATCH = "Mismatch"

# Enumeration order fixes the ordinal code of each value; Mismatch is always
# appended last (code == enumeration length).
CATEGORY_FIELDS: dict[str, tuple[str, ...]] = {
    "industry_growth": ("No", "N/A", "Yes"),
    "market_size": ("Small", "Medium", "Large", "N/A"),
    "development_pace": ("Slower", "Same", "Faster", "N/A"),
    "market_adaptability": ("Not Adaptable", "Somewhat Adaptable", "Very Adaptable", "N/A"),
    "execution_capabilities": ("Poor", "Average", "Excellent", "N/A"),
    "funding_amount": ("Below Average", "Average", "Above Average", "N/A"),
    "valuation_change": ("Decreased", "Remained Stable", "Increased", "N/A"),
    "investor_backing": ("Unknown", "Recognized", "Highly Regarded", "N/A"),
    "reviews_testimonials": ("Negative", "Mixed", "Positive", "N/A"),
    "product_market_fit": ("Weak", "Moderate", "Strong", "N/A"),
    "sentiment_analysis": ("Negative", "Neutral", "Positive", "N/A"),
    "innovation_mentions": ("Rarely", "Sometimes", "Often", "N/A"),
    "cutting_edge_technology": ("No", "Mentioned", "Emphasized", "N/A"),
    "timing": ("Too Early", "Just Right", "Too Late", "N/A"),
}

N_CATEGORIES = len(CATEGORY_FIELDS)


@dataclass(frozen=True)
class CategoricalFeatures:
    """One value per category, each within its enumeration or Mismatch."""

    industry_growth: str = "N/A"
    market_size: str = "N/A"
    development_pace: str = "N/A"
    market_adaptability: str = "N/A"
    execution_capabilities: str = "N/A"
    funding_amount: str = "N/A"
    valuation_change: str = "N/A"
    investor_backing: str = "N/A"
    reviews_testimonials: str = "N/A"
    product_market_fit: str = "N/A"
    sentiment_analysis: str = "N/A"
    innovation_mentions: str = "N/A"
    cutting_edge_technology: str = "N/A"
    timing: str = "N/A"

    def __post_init__(self) -> None:
        for name, options in CATEGORY_FIELDS.items():
            value = getattr(self, name)
            if value != MISMATCH and value not in options:
                raise ValueError(f"{name}={value!r} not in {options} or {MISMATCH!r}")

    def to_mapping(self) -> dict[str, str]:
        return {name: getattr(self, name) for name in CATEGORY_FIELDS}

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any], lenient: bool = True) -> "CategoricalFeatures":
        """Build features from a parsed response.

        In lenient mode any missing or out-of-enumeration value becomes
        Mismatch instead of failing the record.
        """
        values: dict[str, str] = {}
        for name, options in CATEGORY_FIELDS.items():
            raw = data.get(name)
            if isinstance(raw, str) and raw in options:
                values[name] = raw
            elif lenient:
                values[name] = MISMATCH
            else:
                raise ValueError(f"{name}={raw!r} not in {options}")
        return cls(**values)


def encode(features: CategoricalFeatures) -> tuple[int, ...]:
    """Ordinal codes in enumeration order; Mismatch maps to the final code."""
    codes = []
    for name, options in CATEGORY_FIELDS.items():
        value = getattr(features, name)
        codes.append(len(options) if value == MISMATCH else options.index(value))
    return tuple(codes)


def decode(codes: Sequence[int]) -> CategoricalFeatures:
    if len(codes) != N_CATEGORIES:
        raise LengthMismatch(f"expected {N_CATEGORIES} codes, got {len(codes)}")
    values = {}
    for (name, options), code in zip(CATEGORY_FIELDS.items(), codes):
        if not 0 <= code <= len(options):
            raise ValueError(f"{name} code {code} outside 0..{len(options)}")
        values[name] = MISMATCH if code == len(options) else options[code]
    return CategoricalFeatures(**values)


def extract_categories(
    startup: StartupRecord,
    gateway: Gateway,
    model_id: str = "gpt-4o-mini",
) -> CategoricalFeatures:
    """Ask the scout prompt for the 14 categories; degrade to Mismatch.

    A response with no JSON at all is retried once with a corrective suffix;
    if that also fails the record gets an all-Mismatch vector with a warning
    rather than an error.
    """
    startup_info = f"Name: {startup.name}\nDescription: {startup.description}\nFounders:\n{startup.founders_text()}"
    request = ChatRequest(
        system_prompt=prompts.DEFAULT_SYSTEM_PROMPT,
        user_prompt=render(prompts.VC_SCOUT, {"startup_info": startup_info}),
        model_id=model_id,
    )
    data = extract_first_json(gateway.complete(request))
    if data is None:
        retry = ChatRequest(
            system_prompt=request.system_prompt,
            user_prompt=request.user_prompt + CORRECTIVE_JSON_SUFFIX,
            model_id=model_id,
        )
        data = extract_first_json(gateway.complete(retry))
    if data is None:
        logger.warning("no JSON in categorization response for %r; using all-Mismatch", startup.name)
        return CategoricalFeatures(**{name: MISMATCH for name in CATEGORY_FIELDS})
    return CategoricalFeatures.from_mapping(data, lenient=True)


# ---------------------------------------------------------------------------
# Decision tree and forest
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 1
    features_per_split: int = 4  # ceil(sqrt(14))
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1 or self.min_samples_leaf < 1 or self.features_per_split < 1:
            raise ValueError("forest sizes must be positive")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")


def _gini(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts / total
    return float(1.0 - np.dot(p, p))


def _best_split(X: np.ndarray, y: np.ndarray, feature_indices: Sequence[int], min_leaf: int):
    """Minimum weighted-Gini split over the given features.

    Candidates are scanned with features ascending and thresholds ascending,
    and only strict improvements are kept, so ties resolve to the smallest
    (feature, threshold) pair.
    """
    n = len(y)
    best = None  # (weighted_gini, feature, threshold)
    for feature in feature_indices:
        values = np.unique(X[:, feature])
        for threshold in values[:-1]:  # splitting at the max puts everything left
            mask = X[:, feature] <= threshold
            n_left = int(mask.sum())
            n_right = n - n_left
            if n_left < min_leaf or n_right < min_leaf:
                continue
            left_counts = np.bincount(y[mask], minlength=2)
            right_counts = np.bincount(y[~mask], minlength=2)
            score = (n_left * _gini(left_counts) + n_right * _gini(right_counts)) / n
            if best is None or score < best[0]:
                best = (score, int(feature), float(threshold))
    return best


class DecisionTree:
    """CART classifier on integer-coded features with axis-aligned <= splits."""

    def __init__(
        self,
        max_depth: int | None = None,
        min_samples_leaf: int = 1,
        features_per_split: int | None = None,
    ):
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.features_per_split = features_per_split
        self.root: dict | None = None

    def fit(self, X: Sequence[Sequence[int]], y: Sequence[int], rng: np.random.Generator | None = None):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=int)
        if len(X) == 0:
            raise EmptyData("cannot fit a tree on an empty dataset")
        if len(X) != len(y):
            raise LengthMismatch("X and y lengths differ")
        if rng is None:
            rng = np.random.default_rng(0)
        self.root = self._grow(X, y, depth=0, rng=rng)
        return self

    def _grow(self, X: np.ndarray, y: np.ndarray, depth: int, rng: np.random.Generator) -> dict:
        counts = np.bincount(y, minlength=2)
        # Majority prediction with ties resolved to failure.
        node: dict[str, Any] = {"prediction": int(counts[1] > counts[0])}
        if counts[0] == 0 or counts[1] == 0:
            return node
        if self.max_depth is not None and depth >= self.max_depth:
            return node
        n_features = X.shape[1]
        k = self.features_per_split or n_features
        if k >= n_features:
            candidates = list(range(n_features))
        else:
            candidates = sorted(rng.choice(n_features, size=k, replace=False).tolist())
        best = _best_split(X, y, candidates, self.min_samples_leaf)
        if best is None:
            return node
        _, feature, threshold = best
        mask = X[:, feature] <= threshold
        node.update(
            {
                "feature": feature,
                "threshold": threshold,
                "left": self._grow(X[mask], y[mask], depth + 1, rng),
                "right": self._grow(X[~mask], y[~mask], depth + 1, rng),
            }
        )
        return node

    def predict_one(self, x: Sequence[int]) -> int:
        node = self.root
        if node is None:
            raise EmptyData("tree is not fitted")
        while "feature" in node:
            node = node["left"] if x[node["feature"]] <= node["threshold"] else node["right"]
        return node["prediction"]

    def predict(self, X: Sequence[Sequence[int]]) -> list[int]:
        return [self.predict_one(row) for row in X]

    def to_dict(self) -> dict:
        return {
            "max_depth": self.max_depth,
            "min_samples_leaf": self.min_samples_leaf,
            "features_per_split": self.features_per_split,
            "root": self.root,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DecisionTree":
        tree = cls(
            max_depth=data["max_depth"],
            min_samples_leaf=data["min_samples_leaf"],
            features_per_split=data["features_per_split"],
        )
        tree.root = data["root"]
        return tree


@dataclass
class Forest:
    trees: list[DecisionTree]
    config: ForestConfig


def train_forest(
    X: Sequence[Sequence[int]],
    y: Sequence[Outcome | int],
    config: ForestConfig = ForestConfig(),
) -> Forest:
    """Grow ``n_trees`` CART trees on bootstrap resamples; seeded and deterministic.

    Each tree owns its own RNG stream spawned from the configured seed, so
    results do not depend on training order.
    """
    X = np.asarray(X, dtype=float)
    labels = np.asarray([int(v) for v in y], dtype=int)
    if len(X) != len(labels):
        raise LengthMismatch("X and y lengths differ")
    if len(X) < 2:
        raise EmptyData("need at least 2 training rows")
    if len(np.unique(labels)) < 2:
        raise SingleClass("training data contains a single class")

    streams = np.random.SeedSequence(config.seed).spawn(config.n_trees)
    trees = []
    for stream in streams:
        rng = np.random.default_rng(stream)
        bootstrap = rng.integers(0, len(X), size=len(X))
        tree = DecisionTree(
            max_depth=config.max_depth,
            min_samples_leaf=config.min_samples_leaf,
            features_per_split=config.features_per_split,
        )
        tree.fit(X[bootstrap], labels[bootstrap], rng=rng)
        trees.append(tree)
    return Forest(trees=trees, config=config)


def predict(forest: Forest, x: Sequence[int]) -> tuple[Outcome, float]:
    """Majority vote across trees; exact ties go to failure."""
    votes = sum(tree.predict_one(x) for tree in forest.trees)
    vote_fraction = votes / len(forest.trees)
    return (Outcome.SUCCESS if vote_fraction > 0.5 else Outcome.FAILURE), vote_fraction


def predict_many(forest: Forest, X: Sequence[Sequence[int]]) -> tuple[list[Outcome], list[float]]:
    outcomes, fractions = [], []
    for row in X:
        outcome, fraction = predict(forest, row)
        outcomes.append(outcome)
        fractions.append(fraction)
    return outcomes, fractions


FOREST_FILE_VERSION = 1


def save_forest(forest: Forest, path: str | Path) -> None:
    payload = {
        "format_version": FOREST_FILE_VERSION,
        "config": {
            "n_trees": forest.config.n_trees,
            "max_depth": forest.config.max_depth,
            "min_samples_leaf": forest.config.min_samples_leaf,
            "features_per_split": forest.config.features_per_split,
            "seed": forest.config.seed,
        },
        "trees": [tree.to_dict() for tree in forest.trees],
    }
    Path(path).write_text(json.dumps(payload))


def load_forest(path: str | Path) -> Forest:
    payload = json.loads(Path(path).read_text())
    if payload.get("format_version") != FOREST_FILE_VERSION:
        raise ValueError(f"unsupported forest file version: {payload.get('format_version')}")
    config = ForestConfig(**payload["config"])
    return Forest(trees=[DecisionTree.from_dict(t) for t in payload["trees"]], config=config)


# ---------------------------------------------------------------------------
# Classification metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class ClassificationReport:
    per_class: Mapping[int, ClassMetrics]
    accuracy: float
    macro_avg: ClassMetrics
    weighted_avg: ClassMetrics
    confusion: tuple[tuple[int, int], tuple[int, int]]  # rows actual, cols predicted

    def to_dict(self) -> dict:
        return {
            "per_class": {
                str(label): {
                    "precision": m.precision,
                    "recall": m.recall,
                    "f1": m.f1,
                    "support": m.support,
                }
                for label, m in sorted(self.per_class.items())
            },
            "accuracy": self.accuracy,
            "macro_avg": {
                "precision": self.macro_avg.precision,
                "recall": self.macro_avg.recall,
                "f1": self.macro_avg.f1,
                "support": self.macro_avg.support,
            },
            "weighted_avg": {
                "precision": self.weighted_avg.precision,
                "recall": self.weighted_avg.recall,
                "f1": self.weighted_avg.f1,
                "support": self.weighted_avg.support,
            },
            "confusion": [list(row) for row in self.confusion],
        }

    def to_text(self) -> str:
        lines = [f"{'class':>12} {'precision':>10} {'recall':>10} {'f1':>10} {'support':>10}"]
        for label, m in sorted(self.per_class.items()):
            lines.append(f"{label:>12} {m.precision:>10.4f} {m.recall:>10.4f} {m.f1:>10.4f} {m.support:>10}")
        total = self.macro_avg.support
        lines.append(f"{'accuracy':>12} {'':>10} {'':>10} {self.accuracy:>10.4f} {total:>10}")
        lines.append(
            f"{'macro avg':>12} {self.macro_avg.precision:>10.4f} {self.macro_avg.recall:>10.4f} "
            f"{self.macro_avg.f1:>10.4f} {total:>10}"
        )
        lines.append(
            f"{'weighted avg':>12} {self.weighted_avg.precision:>10.4f} {self.weighted_avg.recall:>10.4f} "
            f"{self.weighted_avg.f1:>10.4f} {total:>10}"
        )
        return "\n".join(lines)


def _safe_div(numerator: float, denominator: float) -> float:
    return numerator / denominator if denominator else 0.0


def classification_report(
    y_true: Sequence[Outcome | int], y_pred: Sequence[Outcome | int]
) -> ClassificationReport:
    """Standard binary precision/recall/F1 report with a 2x2 confusion matrix."""
    truth = [int(v) for v in y_true]
    preds = [int(v) for v in y_pred]
    if len(truth) != len(preds) or not truth:
        raise LengthMismatch("y_true and y_pred must be equal-length and non-empty")

    confusion = [[0, 0], [0, 0]]
    for actual, predicted in zip(truth, preds):
        confusion[actual][predicted] += 1
    total = len(truth)

    per_class: dict[int, ClassMetrics] = {}
    for label in (0, 1):
        tp = confusion[label][label]
        predicted_count = confusion[0][label] + confusion[1][label]
        support = confusion[label][0] + confusion[label][1]
        precision = _safe_div(tp, predicted_count)
        recall = _safe_div(tp, support)
        f1 = _safe_div(2 * precision * recall, precision + recall)
        per_class[label] = ClassMetrics(precision=precision, recall=recall, f1=f1, support=support)

    accuracy = (confusion[0][0] + confusion[1][1]) / total
    macro = ClassMetrics(
        precision=(per_class[0].precision + per_class[1].precision) / 2,
        recall=(per_class[0].recall + per_class[1].recall) / 2,
        f1=(per_class[0].f1 + per_class[1].f1) / 2,
        support=total,
    )
    weighted = ClassMetrics(
        precision=sum(m.precision * m.support for m in per_class.values()) / total,
        recall=sum(m.recall * m.support for m in per_class.values()) / total,
        f1=sum(m.f1 * m.support for m in per_class.values()) / total,
        support=total,
    )
    return ClassificationReport(
        per_class=per_class,
        accuracy=accuracy,
        macro_avg=macro,
        weighted_avg=weighted,
        confusion=((confusion[0][0], confusion[0][1]), (confusion[1][0], confusion[1][1])),
    )


# Published reference metrics for the skewed 1:4 benchmark, kept for
# output-format comparisons; they are not reproduction targets.
REFERENCE_SKEWED_ACCURACY = 0.8000
REFERENCE_SKEWED_F1 = 0.5455


def skewed_eval(
    forest: Forest,
    X: Sequence[Sequence[int]],
    y: Sequence[Outcome | int],
    ratio_tolerance: float = 0.5,
) -> ClassificationReport:
    """Evaluate on a 1:4 positive:negative split (checked within rounding)."""
    labels = [int(v) for v in y]
    positives = sum(labels)
    negatives = len(labels) - positives
    if positives == 0 or abs(negatives / positives - 4.0) > ratio_tolerance:
        raise RatioViolation(
            f"expected a 1:4 positive:negative ratio, got {positives}:{negatives}"
        )
    predictions, _ = predict_many(forest, X)
    return classification_report(labels, predictions)


def stratified_split(
    X: Sequence[Sequence[int]],
    y: Sequence[Outcome | int],
    test_fraction: float = 0.2,
    seed: int = 0,
) -> tuple[list, list, list, list]:
    """Per-class seeded 80/20 style split; returns X_train, X_test, y_train, y_test."""
    labels = np.asarray([int(v) for v in y], dtype=int)
    rng = np.random.default_rng(seed)
    train_idx: list[int] = []
    test_idx: list[int] = []
    for label in np.unique(labels):
        members = np.flatnonzero(labels == label)
        members = members[rng.permutation(len(members))]
        n_test = int(round(len(members) * test_fraction))
        test_idx.extend(members[:n_test].tolist())
        train_idx.extend(members[n_test:].tolist())
    train_idx.sort()
    test_idx.sort()
    X = list(X)
    return (
        [X[i] for i in train_idx],
        [X[i] for i in test_idx],
        [labels[i] for i in train_idx],
        [labels[i] for i in test_idx],
    )
