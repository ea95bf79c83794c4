"""
Gradient boosted regression trees with squared loss

    f(x) = initial_estimate + shrinkage * sum_k tree_weight_k * T_k(x)

Each tree is grown best-first up to max_leaf_nodes leaves on the current
residuals. Splits route a row left when x[feature] < threshold.
"""

import heapq
import logging
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from models.store import read_json, write_json
from utils.errors import GbtError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
GAIN_EPS = 1e-12


@dataclass(frozen=True)
class GbtConfig:
    num_trees: int = 67
    max_leaf_nodes: int = 10
    shrinkage: float = 0.1
    min_samples_per_leaf: int = 20
    feature_subsample: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.max_leaf_nodes < 2:
            raise GbtError(f"max_leaf_nodes must be >= 2, got {self.max_leaf_nodes}")
        if not 0 < self.shrinkage <= 1:
            raise GbtError(f"shrinkage must be in (0, 1], got {self.shrinkage}")
        if self.num_trees < 0:
            raise GbtError(f"num_trees must be >= 0, got {self.num_trees}")
        if self.min_samples_per_leaf < 1:
            raise GbtError(f"min_samples_per_leaf must be >= 1, got {self.min_samples_per_leaf}")
        if not 0 < self.feature_subsample <= 1:
            raise GbtError(f"feature_subsample must be in (0, 1], got {self.feature_subsample}")


# ==================== DATASET ====================

@dataclass
class Dataset:
    """
    Training rows

    counts holds how many original samples each row stands for; it is 1 for
    every row unless the dataset was collapsed.
    """

    features: np.ndarray
    targets: np.ndarray
    weights: Optional[np.ndarray] = None
    counts: Optional[np.ndarray] = None
    feature_names: Optional[List[str]] = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        if self.features.ndim != 2:
            raise GbtError(f"features must be a 2-D matrix, got {self.features.ndim} dimensions")
        n = self.features.shape[0]
        self.weights = np.ones(n) if self.weights is None else np.asarray(self.weights, dtype=float)
        self.counts = np.ones(n, dtype=np.int64) if self.counts is None else np.asarray(self.counts, dtype=np.int64)

        if self.targets.shape != (n,) or self.weights.shape != (n,) or self.counts.shape != (n,):
            raise GbtError("features, targets, weights and counts disagree on the number of rows")
        if not np.all(np.isfinite(self.features)):
            raise GbtError("features contain non-finite values")
        if not np.all(np.isfinite(self.targets)):
            raise GbtError("targets contain non-finite values")
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights < 0):
            raise GbtError("instance weights must be finite and non-negative")

    @property
    def num_rows(self):
        return self.features.shape[0]

    @property
    def num_features(self):
        return self.features.shape[1]

    def collapse(self):
        """
        Merge rows with identical feature vectors

        Weights add up, targets become the weighted mean, counts add up.
        Under squared loss the fitted ensemble is the same as on the full data.
        """
        if self.num_rows == 0:
            return self
        unique, inverse = np.unique(self.features, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        size = unique.shape[0]
        weight_sum = np.bincount(inverse, weights=self.weights, minlength=size)
        target_sum = np.bincount(inverse, weights=self.weights * self.targets, minlength=size)
        plain_sum = np.bincount(inverse, weights=self.targets, minlength=size)
        counts = np.bincount(inverse, weights=self.counts, minlength=size).astype(np.int64)
        with np.errstate(invalid="ignore", divide="ignore"):
            targets = np.where(weight_sum > 0, target_sum / np.where(weight_sum > 0, weight_sum, 1.0),
                               plain_sum / counts)
        return Dataset(unique, targets, weight_sum, counts, self.feature_names)


def weighted_mse(targets, predictions, weights):
    total = float(weights.sum())
    if total == 0:
        return 0.0
    return float(np.dot(weights, (targets - predictions) ** 2) / total)


# ==================== TREE ====================

@dataclass
class RegressionTree:
    """Flattened binary tree; feature = -1 marks a leaf"""

    feature: List[int] = field(default_factory=list)
    threshold: List[float] = field(default_factory=list)
    left: List[int] = field(default_factory=list)
    right: List[int] = field(default_factory=list)
    value: List[float] = field(default_factory=list)

    @property
    def num_leaves(self):
        return sum(1 for f in self.feature if f < 0)

    def _add_leaf(self, value):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(float(value))
        return len(self.feature) - 1

    def apply(self, x):
        """Leaf index reached by every row of x"""
        feature = np.asarray(self.feature, dtype=np.int64)
        threshold = np.asarray(self.threshold, dtype=float)
        left = np.asarray(self.left, dtype=np.int64)
        right = np.asarray(self.right, dtype=np.int64)

        nodes = np.zeros(x.shape[0], dtype=np.int64)
        while True:
            active = np.nonzero(feature[nodes] >= 0)[0]
            if active.size == 0:
                return nodes
            current = nodes[active]
            go_left = x[active, feature[current]] < threshold[current]
            nodes[active] = np.where(go_left, left[current], right[current])

    def predict(self, x):
        return np.asarray(self.value, dtype=float)[self.apply(x)]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, record):
        return cls(
            feature=[int(v) for v in record["feature"]],
            threshold=[float(v) for v in record["threshold"]],
            left=[int(v) for v in record["left"]],
            right=[int(v) for v in record["right"]],
            value=[float(v) for v in record["value"]],
        )


@dataclass
class _Split:
    gain: float
    feature: int
    threshold: float
    left_rows: np.ndarray
    right_rows: np.ndarray


def _leaf_value(rows, residuals, weights):
    total = weights[rows].sum()
    if total <= 0:
        return 0.0
    return float(np.dot(weights[rows], residuals[rows]) / total)


def find_best_split(x, residuals, weights, counts, rows, features, min_samples_per_leaf):
    """
    Exact greedy search over every threshold between distinct values

    Ties go to the lowest feature index, then the lowest threshold.
    """
    w = weights[rows]
    wr = w * residuals[rows]
    c = counts[rows]
    total_w = w.sum()
    total_s = wr.sum()
    total_c = c.sum()
    if total_c < 2 * min_samples_per_leaf or total_w <= 0:
        return None
    parent_score = total_s * total_s / total_w

    best = None
    for f in features:
        values = x[rows, f]
        order = np.argsort(values, kind="mergesort")
        sorted_values = values[order]
        left_w = np.cumsum(w[order])[:-1]
        left_s = np.cumsum(wr[order])[:-1]
        left_c = np.cumsum(c[order])[:-1]
        right_w = total_w - left_w
        right_s = total_s - left_s
        right_c = total_c - left_c

        valid = ((sorted_values[:-1] < sorted_values[1:])
                 & (left_c >= min_samples_per_leaf) & (right_c >= min_samples_per_leaf)
                 & (left_w > 0) & (right_w > 0))
        if not valid.any():
            continue

        with np.errstate(invalid="ignore", divide="ignore"):
            gains = (left_s * left_s / np.where(valid, left_w, 1.0)
                     + right_s * right_s / np.where(valid, right_w, 1.0) - parent_score)
        gains = np.where(valid, gains, -np.inf)
        position = int(np.argmax(gains))
        gain = float(gains[position])
        if gain <= GAIN_EPS or (best is not None and gain <= best.gain):
            continue

        low, high = sorted_values[position], sorted_values[position + 1]
        threshold = (low + high) / 2.0
        if not low < threshold <= high:
            threshold = high
        go_left = values < threshold
        best = _Split(gain, int(f), float(threshold), rows[go_left], rows[~go_left])
    return best


def grow_tree(x, residuals, weights, counts, config, features):
    """Best-first growth: always split the leaf with the largest gain"""
    tree = RegressionTree()
    all_rows = np.arange(x.shape[0])
    root = tree._add_leaf(_leaf_value(all_rows, residuals, weights))

    frontier = []
    split = find_best_split(x, residuals, weights, counts, all_rows, features, config.min_samples_per_leaf)
    if split is not None:
        heapq.heappush(frontier, (-split.gain, root, split))

    leaves = 1
    while frontier and leaves < config.max_leaf_nodes:
        _, node, split = heapq.heappop(frontier)
        left = tree._add_leaf(_leaf_value(split.left_rows, residuals, weights))
        right = tree._add_leaf(_leaf_value(split.right_rows, residuals, weights))
        tree.feature[node] = split.feature
        tree.threshold[node] = split.threshold
        tree.left[node] = left
        tree.right[node] = right
        tree.value[node] = 0.0
        leaves += 1

        for child, rows in ((left, split.left_rows), (right, split.right_rows)):
            child_split = find_best_split(x, residuals, weights, counts, rows, features,
                                          config.min_samples_per_leaf)
            if child_split is not None:
                heapq.heappush(frontier, (-child_split.gain, child, child_split))
    return tree


# ==================== ENSEMBLE ====================

@dataclass
class GbtModel:
    initial_estimate: float
    num_features: int
    shrinkage: float
    trees: List[RegressionTree] = field(default_factory=list)
    tree_weights: List[float] = field(default_factory=list)
    loss: str = "squared"
    config: Optional[GbtConfig] = None
    train_loss_history: List[float] = field(default_factory=list)

    def __post_init__(self):
        if len(self.trees) != len(self.tree_weights):
            raise GbtError("every tree needs exactly one tree weight")
        if not 0 < self.shrinkage <= 1:
            raise GbtError(f"shrinkage must be in (0, 1], got {self.shrinkage}")

    def _matrix(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        if x.shape[1] != self.num_features:
            raise GbtError(f"model expects {self.num_features} features, got {x.shape[1]}")
        return x

    def predict(self, x):
        """Scores for every row of a matrix"""
        x = self._matrix(x)
        scores = np.full(x.shape[0], self.initial_estimate, dtype=float)
        for tree, beta in zip(self.trees, self.tree_weights):
            scores += self.shrinkage * beta * tree.predict(x)
        return scores

    def staged_predict(self, x):
        """Scores after 0, 1, ..., K trees"""
        x = self._matrix(x)
        scores = np.full(x.shape[0], self.initial_estimate, dtype=float)
        yield scores.copy()
        for tree, beta in zip(self.trees, self.tree_weights):
            scores += self.shrinkage * beta * tree.predict(x)
            yield scores.copy()

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "loss": self.loss,
            "config": asdict(self.config) if self.config else None,
            "num_features": self.num_features,
            "initial_estimate": self.initial_estimate,
            "shrinkage": self.shrinkage,
            "tree_weights": list(self.tree_weights),
            "trees": [tree.to_dict() for tree in self.trees],
            "train_loss_history": list(self.train_loss_history),
        }

    @classmethod
    def from_dict(cls, record):
        version = record.get("format_version")
        if version != FORMAT_VERSION:
            raise GbtError(f"unsupported model format version {version!r}")
        if record.get("loss") != "squared":
            raise GbtError(f"unsupported loss {record.get('loss')!r}")
        return cls(
            initial_estimate=float(record["initial_estimate"]),
            num_features=int(record["num_features"]),
            shrinkage=float(record["shrinkage"]),
            trees=[RegressionTree.from_dict(t) for t in record["trees"]],
            tree_weights=[float(b) for b in record["tree_weights"]],
            config=GbtConfig(**record["config"]) if record.get("config") else None,
            train_loss_history=[float(v) for v in record.get("train_loss_history", [])],
        )


def fit_gbt(data: Dataset, config=None) -> GbtModel:
    """
    Boost squared-loss regression trees on a dataset

    Raises:
        GbtError: empty dataset
    """
    config = config or GbtConfig()
    if data.num_rows == 0:
        raise GbtError("cannot train on an empty dataset")

    x, y, w, counts = data.features, data.targets, data.weights, data.counts
    total_w = w.sum()
    initial = float(np.dot(w, y) / total_w) if total_w > 0 else float(y.mean())

    predictions = np.full(data.num_rows, initial)
    model = GbtModel(initial_estimate=initial, num_features=data.num_features, shrinkage=config.shrinkage,
                     config=config)
    model.train_loss_history.append(weighted_mse(y, predictions, w))

    all_features = np.arange(data.num_features)
    n_pick = max(1, int(round(config.feature_subsample * data.num_features)))
    for k in range(config.num_trees):
        if n_pick < data.num_features:
            rng = np.random.default_rng([config.seed, k])
            features = np.sort(rng.choice(all_features, size=n_pick, replace=False))
        else:
            features = all_features

        residuals = y - predictions
        tree = grow_tree(x, residuals, w, counts, config, features)
        predictions = predictions + config.shrinkage * tree.predict(x)
        model.trees.append(tree)
        model.tree_weights.append(1.0)
        model.train_loss_history.append(weighted_mse(y, predictions, w))

    logger.info(f"✅ Trained {len(model.trees)} trees on {data.num_rows} rows, "
                f"train MSE {model.train_loss_history[-1]:.6g}")
    return model


def predict_gbt(model: GbtModel, features) -> float:
    """Score one feature vector"""
    vector = np.asarray(features, dtype=float)
    if vector.ndim != 1:
        raise GbtError("predict_gbt scores a single vector")
    return float(model.predict(vector)[0])


def save_model(path, model):
    write_json(path, model.to_dict())
    logger.info(f"✅ Saved model with {len(model.trees)} trees to {path}")


def load_model(path) -> GbtModel:
    try:
        return GbtModel.from_dict(read_json(path))
    except (KeyError, TypeError, ValueError) as e:
        raise GbtError(f"cannot read model file {path}: {e}") from None
