"""From-scratch gradient-boosted trees over histogram-binned features.

Multiclass training fits one tree per class per round against softmax
gradients (one-vs-rest ensembles, softmax-normalized at prediction);
a squared-loss variant serves the lifetime regressor. Split search runs
on per-feature quantile-binned codes through the histogram kernel in
tierlab._kernels, which is the only compiled hot path.

Everything is deterministic for a fixed seed: the validation split comes
from a seeded generator, split ties break to the lowest feature index
then the lowest bin, and histogram accumulation order is fixed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from tierlab._kernels import BACKEND, hist_accumulate
from tierlab.labels import FeatureSchema, FeatureVector, TrainingExample

L2_REGULARIZATION = 1.0  # lambda in split gain and leaf weight
MIN_SPLIT_GAIN = 1e-12
MODEL_FORMAT = "tierlab-gbt"
MODEL_VERSION = 1


@dataclass(frozen=True)
class GbtParams:
    max_trees: int = 300
    max_depth: int = 6
    learning_rate: float = 0.1
    histogram_bins: int = 64
    validation_fraction: float = 0.1
    early_stop_rounds: int = 20
    seed: int = 0

    def validate(self) -> None:
        if self.max_trees < 1:
            raise ValueError("max_trees must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not (0.0 < self.learning_rate <= 1.0):
            raise ValueError("learning_rate out of (0, 1]")
        if not (2 <= self.histogram_bins <= 256):
            raise ValueError("histogram_bins out of [2, 256]")
        if not (0.0 <= self.validation_fraction < 1.0):
            raise ValueError("validation_fraction out of [0, 1)")
        if self.early_stop_rounds < 1:
            raise ValueError("early_stop_rounds must be >= 1")

    def to_dict(self) -> dict:
        return {
            "max_trees": self.max_trees,
            "max_depth": self.max_depth,
            "learning_rate": self.learning_rate,
            "histogram_bins": self.histogram_bins,
            "validation_fraction": self.validation_fraction,
            "early_stop_rounds": self.early_stop_rounds,
            "seed": self.seed,
        }


class _Tree:
    """One regression tree as parallel node arrays; -1 marks a leaf."""

    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self, feature, threshold, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int32)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int32)
        self.right = np.asarray(right, dtype=np.int32)
        self.value = np.asarray(value, dtype=np.float64)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "_Tree":
        return cls(d["feature"], d["threshold"], d["left"], d["right"], d["value"])


def _bin_features(X: np.ndarray, n_bins: int) -> tuple[np.ndarray, list[np.ndarray]]:
    """Quantile bin edges per feature; codes[i,f] = #edges strictly < x.

    A split at bin b means "x <= edges[f][b]", so the raw threshold is
    stored in the tree and prediction never needs binning.
    """
    n, n_features = X.shape
    qs = np.arange(1, n_bins) / n_bins
    codes = np.empty((n, n_features), dtype=np.uint8)
    edges: list[np.ndarray] = []
    for f in range(n_features):
        col = X[:, f]
        e = np.unique(np.quantile(col, qs)) if n > 1 else np.array([col[0]])
        edges.append(e)
        codes[:, f] = np.searchsorted(e, col, side="left").astype(np.uint8)
    return codes, edges


def _node_totals(hist):
    g, h, cnt = hist
    return float(g[0].sum()), float(h[0].sum()), int(cnt[0].sum())


def _best_split(hist, n_bins: int):
    """Max-gain (feature, bin, gain); ties to lowest feature then bin."""
    g, h, cnt = hist
    G, H, _ = _node_totals(hist)
    lam = L2_REGULARIZATION
    GL = np.cumsum(g, axis=1)
    HL = np.cumsum(h, axis=1)
    CL = np.cumsum(cnt, axis=1)
    GR = G - GL
    HR = H - HL
    CR = _node_totals(hist)[2] - CL
    gain = GL * GL / (HL + lam) + GR * GR / (HR + lam) - G * G / (H + lam)
    gain = np.where((CL > 0) & (CR > 0), gain, -np.inf)
    flat = int(np.argmax(gain))
    f, b = divmod(flat, n_bins)
    return f, b, float(gain[f, b])


def _grow_tree(codes, edges, grad, hess, rows, params: GbtParams):
    """Depth-wise growth; returns the tree plus (rows, value) per leaf.

    Each split accumulates the histogram of the smaller child and derives
    the larger by subtraction from the parent (identical float results on
    both kernel backends, so this stays backend-independent).
    """
    n_bins = params.histogram_bins
    lam = L2_REGULARIZATION
    lr = params.learning_rate
    feature, threshold, left, right, value = [], [], [], [], []
    leaf_assignments: list[tuple[np.ndarray, float]] = []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    def make_leaf(idx, hist):
        G, H, _ = _node_totals(hist)
        value[idx] = -lr * G / (H + lam)

    root = new_node()
    root_hist = hist_accumulate(codes, rows, grad, hess, n_bins)
    level = [(root, rows, root_hist)]
    for depth in range(params.max_depth):
        next_level = []
        for idx, node_rows, hist in level:
            if len(node_rows) < 2:
                make_leaf(idx, hist)
                leaf_assignments.append((node_rows, value[idx]))
                continue
            f, b, gain = _best_split(hist, n_bins)
            if not np.isfinite(gain) or gain <= MIN_SPLIT_GAIN:
                make_leaf(idx, hist)
                leaf_assignments.append((node_rows, value[idx]))
                continue
            mask = codes[node_rows, f] <= b
            rows_l = node_rows[mask]
            rows_r = node_rows[~mask]
            if len(rows_l) <= len(rows_r):
                hist_l = hist_accumulate(codes, rows_l, grad, hess, n_bins)
                hist_r = (hist[0] - hist_l[0], hist[1] - hist_l[1], hist[2] - hist_l[2])
            else:
                hist_r = hist_accumulate(codes, rows_r, grad, hess, n_bins)
                hist_l = (hist[0] - hist_r[0], hist[1] - hist_r[1], hist[2] - hist_r[2])
            feature[idx] = f
            threshold[idx] = float(edges[f][b])
            il = new_node()
            ir = new_node()
            left[idx] = il
            right[idx] = ir
            next_level.append((il, rows_l, hist_l))
            next_level.append((ir, rows_r, hist_r))
        level = next_level
        if not level:
            break
    for idx, node_rows, hist in level:
        make_leaf(idx, hist)
        leaf_assignments.append((node_rows, value[idx]))
    return _Tree(feature, threshold, left, right, value), leaf_assignments


class _FlatTrees:
    """Trees of one output stacked for vectorized root-to-leaf traversal."""

    def __init__(self, trees: Sequence[_Tree], max_depth: int):
        self.max_depth = max_depth
        if not trees:
            self.roots = np.zeros(0, dtype=np.int32)
            self.feature = np.zeros(0, dtype=np.int32)
            self.threshold = np.zeros(0, dtype=np.float64)
            self.left = np.zeros(0, dtype=np.int32)
            self.right = np.zeros(0, dtype=np.int32)
            self.value = np.zeros(0, dtype=np.float64)
            return
        roots, offset = [], 0
        for t in trees:
            roots.append(offset)
            offset += t.n_nodes
        self.roots = np.asarray(roots, dtype=np.int32)
        self.feature = np.concatenate([t.feature for t in trees])
        self.threshold = np.concatenate([t.threshold for t in trees])
        self.left = np.concatenate([t.left for t in trees])
        self.right = np.concatenate([t.right for t in trees])
        self.value = np.concatenate([t.value for t in trees])
        node_idx = np.arange(len(self.feature), dtype=np.int32)
        shift = np.repeat(self.roots, [t.n_nodes for t in trees]).astype(np.int32)
        is_leaf = self.feature < 0
        # Global child indices; leaves self-loop so a fixed number of
        # traversal steps lands every example on its leaf.
        self.left = np.where(is_leaf, node_idx, self.left + shift).astype(np.int32)
        self.right = np.where(is_leaf, node_idx, self.right + shift).astype(np.int32)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Sum of leaf values over all stacked trees, per row of X."""
        n = X.shape[0]
        if len(self.roots) == 0 or n == 0:
            return np.zeros(n, dtype=np.float64)
        idx = np.broadcast_to(self.roots, (n, len(self.roots))).copy()
        rows = np.arange(n)[:, None]
        for _ in range(self.max_depth):
            f = self.feature[idx]
            xv = X[rows, np.maximum(f, 0)]
            go_left = xv <= self.threshold[idx]
            idx = np.where(go_left, self.left[idx], self.right[idx])
        return self.value[idx].sum(axis=1)


def _softmax(margins: np.ndarray) -> np.ndarray:
    z = margins - margins.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _log_loss(margins: np.ndarray, y: np.ndarray) -> float:
    p = _softmax(margins)
    return float(-np.mean(np.log(np.clip(p[np.arange(len(y)), y], 1e-15, None))))


def _split_indices(n: int, params: GbtParams) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(params.seed)
    perm = rng.permutation(n)
    val_n = int(round(params.validation_fraction * n))
    if params.validation_fraction > 0.0:
        val_n = max(1, min(val_n, n - 1))
    else:
        val_n = 0
    valid = np.sort(perm[:val_n])
    train = np.sort(perm[val_n:])
    return train.astype(np.int64), valid.astype(np.int64)


class TrainedGbt:
    """Multiclass boosted-tree model; implements the category-model API."""

    def __init__(self, schema: FeatureSchema, params: GbtParams, n_categories: int,
                 base_scores: np.ndarray, trees: list[list[_Tree]], metadata: dict):
        self.schema = schema
        self.params = params
        self.n_categories = n_categories
        self.base_scores = np.asarray(base_scores, dtype=np.float64)
        self.trees = trees
        self.metadata = metadata
        self._flat = [_FlatTrees(class_trees, params.max_depth) for class_trees in trees]

    @property
    def name(self) -> str:
        return "gbt"

    @property
    def n_rounds(self) -> int:
        return len(self.trees[0]) if self.trees else 0

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        """Class scores (pre-softmax margins), shape (n, n_categories)."""
        n = X.shape[0]
        scores = np.tile(self.base_scores, (n, 1))
        chunk = 4096
        for start in range(0, n, chunk):
            sl = slice(start, min(start + chunk, n))
            for c, flat in enumerate(self._flat):
                scores[sl, c] += flat.apply(X[sl])
        return scores

    def predict_rows(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_matrix(X), axis=1)

    def predict_batch(self, features: Sequence[FeatureVector]) -> np.ndarray:
        return self.predict_rows(self.schema.matrix(features))

    def predict(self, features: FeatureVector) -> int:
        return int(self.predict_batch([features])[0])

    def predict_for(self, job, features: FeatureVector) -> int:
        return self.predict(features)

    def info(self) -> dict:
        return {
            "n_categories": self.n_categories,
            "rounds": self.n_rounds,
            "trees_total": sum(len(ts) for ts in self.trees),
            "nodes_total": sum(t.n_nodes for ts in self.trees for t in ts),
            "params": self.params.to_dict(),
            **self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(
            {
                "format": MODEL_FORMAT,
                "version": MODEL_VERSION,
                "task": "classify",
                "params": self.params.to_dict(),
                "n_categories": self.n_categories,
                "base_scores": self.base_scores.tolist(),
                "schema": json.loads(self.schema.to_json()),
                "trees": [[t.to_dict() for t in ts] for ts in self.trees],
                "metadata": self.metadata,
            }
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")

    @classmethod
    def from_json(cls, text: str) -> "TrainedGbt":
        data = json.loads(text)
        if data.get("format") != MODEL_FORMAT:
            raise ValueError("not a model file")
        if data.get("task") != "classify":
            raise ValueError(f"expected a classifier, got task={data.get('task')!r}")
        schema = FeatureSchema.from_json(json.dumps(data["schema"]))
        params = GbtParams(**data["params"])
        trees = [[_Tree.from_dict(d) for d in ts] for ts in data["trees"]]
        return cls(schema, params, data["n_categories"], np.array(data["base_scores"]),
                   trees, data["metadata"])

    @classmethod
    def load(cls, path) -> "TrainedGbt":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def fit_classifier_matrix(X: np.ndarray, y: np.ndarray, n_classes: int,
                          params: GbtParams) -> tuple[np.ndarray, list[list["_Tree"]], dict]:
    """Core multiclass boosting on a raw matrix.

    Returns (base_scores, per-class tree lists, metadata). Used by
    train_gbt and by ablation studies that train on column subsets.
    """
    train_idx, valid_idx = _split_indices(len(y), params)
    Xt, yt = X[train_idx], y[train_idx]
    Xv, yv = X[valid_idx], y[valid_idx]
    codes, edges = _bin_features(Xt, params.histogram_bins)

    counts = np.bincount(yt, minlength=n_classes).astype(np.float64)
    base_scores = np.log(np.clip(counts / len(yt), 1e-12, None))

    margins_t = np.tile(base_scores, (len(yt), 1))
    margins_v = np.tile(base_scores, (len(yv), 1))
    onehot = np.zeros((len(yt), n_classes))
    onehot[np.arange(len(yt)), yt] = 1.0
    all_rows = np.arange(len(yt), dtype=np.int32)

    trees: list[list[_Tree]] = [[] for _ in range(n_classes)]
    train_curve, valid_curve = [], []
    best_round, best_loss = -1, np.inf
    for r in range(params.max_trees):
        p = _softmax(margins_t)
        for c in range(n_classes):
            grad = np.ascontiguousarray(p[:, c] - onehot[:, c])
            hess = np.ascontiguousarray(p[:, c] * (1.0 - p[:, c]))
            tree, leaves = _grow_tree(codes, edges, grad, hess, all_rows, params)
            trees[c].append(tree)
            for rows_leaf, v in leaves:
                margins_t[rows_leaf, c] += v
            if len(yv):
                margins_v[:, c] += _FlatTrees([tree], params.max_depth).apply(Xv)
        train_curve.append(_log_loss(margins_t, yt))
        if len(yv):
            valid_curve.append(_log_loss(margins_v, yv))
            if valid_curve[-1] < best_loss - 1e-12:
                best_loss, best_round = valid_curve[-1], r
            elif r - best_round >= params.early_stop_rounds:
                break

    # Truncate at the best validation round so a longer max_trees budget
    # cannot change the returned model once stopping has triggered.
    if len(yv) and best_round >= 0:
        keep = best_round + 1
        trees = [ts[:keep] for ts in trees]
        train_curve = train_curve[:keep]
        valid_curve = valid_curve[:keep]

    metadata = {
        "kernel_backend": BACKEND,
        "train_examples": int(len(yt)),
        "valid_examples": int(len(yv)),
        "train_loss_curve": [float(v) for v in train_curve],
        "valid_loss_curve": [float(v) for v in valid_curve],
        "valid_indices": valid_idx.tolist(),
    }
    acc_X, acc_y = (Xv, yv) if len(yv) else (Xt, yt)
    margins = ensemble_margins(base_scores, trees, params, acc_X)
    metadata["valid_accuracy"] = float(np.mean(np.argmax(margins, axis=1) == acc_y))
    return base_scores, trees, metadata


def ensemble_margins(base_scores: np.ndarray, trees: Sequence[Sequence["_Tree"]],
                     params: GbtParams, X: np.ndarray) -> np.ndarray:
    """Pre-softmax class scores for raw feature rows."""
    n = X.shape[0]
    scores = np.tile(np.asarray(base_scores, dtype=np.float64), (n, 1))
    flats = [_FlatTrees(ts, params.max_depth) for ts in trees]
    chunk = 4096
    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        for c, flat in enumerate(flats):
            scores[sl, c] += flat.apply(X[sl])
    return scores


def train_gbt(train: Sequence[TrainingExample], params: GbtParams,
              n_categories: Optional[int] = None,
              schema: Optional[FeatureSchema] = None) -> TrainedGbt:
    """Fit the multiclass model on labeled examples.

    n_categories defaults to max(label)+1; pass the boundary count when
    some categories may be absent from the sample. The schema (token
    vocabulary) is fitted on the examples unless given.
    """
    params.validate()
    if len(train) < 2:
        raise ValueError("need at least 2 training examples")
    if schema is None:
        schema = FeatureSchema.fit([ex.features for ex in train])
    y = np.array([ex.category for ex in train], dtype=np.int64)
    if y.min() < 0:
        raise ValueError("negative category label")
    n_classes = int(n_categories) if n_categories is not None else int(y.max()) + 1
    if y.max() >= n_classes:
        raise ValueError(f"label {y.max()} out of range for {n_classes} categories")
    X = schema.matrix([ex.features for ex in train])
    base_scores, trees, metadata = fit_classifier_matrix(X, y, n_classes, params)
    metadata.pop("valid_indices", None)
    return TrainedGbt(schema, params, n_classes, base_scores, trees, metadata)


class TrainedGbtRegressor:
    """Squared-loss boosted-tree regressor (used for log-lifetime)."""

    def __init__(self, schema: FeatureSchema, params: GbtParams, base_score: float,
                 trees: list[_Tree], metadata: dict):
        self.schema = schema
        self.params = params
        self.base_score = float(base_score)
        self.trees = trees
        self.metadata = metadata
        self._flat = _FlatTrees(trees, params.max_depth)

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        return self.base_score + self._flat.apply(X)

    def predict_batch(self, features: Sequence[FeatureVector]) -> np.ndarray:
        return self.predict_matrix(self.schema.matrix(features))

    def predict(self, features: FeatureVector) -> float:
        return float(self.predict_batch([features])[0])

    def to_json(self) -> str:
        return json.dumps(
            {
                "format": MODEL_FORMAT,
                "version": MODEL_VERSION,
                "task": "regress",
                "params": self.params.to_dict(),
                "base_score": self.base_score,
                "schema": json.loads(self.schema.to_json()),
                "trees": [t.to_dict() for t in self.trees],
                "metadata": self.metadata,
            }
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")

    @classmethod
    def from_json(cls, text: str) -> "TrainedGbtRegressor":
        data = json.loads(text)
        if data.get("format") != MODEL_FORMAT or data.get("task") != "regress":
            raise ValueError("not a regressor model file")
        schema = FeatureSchema.from_json(json.dumps(data["schema"]))
        params = GbtParams(**data["params"])
        trees = [_Tree.from_dict(d) for d in data["trees"]]
        return cls(schema, params, data["base_score"], trees, data["metadata"])

    @classmethod
    def load(cls, path) -> "TrainedGbtRegressor":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def train_gbt_regressor(features: Sequence[FeatureVector], targets: Sequence[float],
                        params: GbtParams,
                        schema: Optional[FeatureSchema] = None) -> TrainedGbtRegressor:
    params.validate()
    if len(features) < 2:
        raise ValueError("need at least 2 training examples")
    if len(features) != len(targets):
        raise ValueError("features/targets length mismatch")
    if schema is None:
        schema = FeatureSchema.fit(features)
    X = schema.matrix(features)
    y = np.asarray(targets, dtype=np.float64)

    train_idx, valid_idx = _split_indices(len(y), params)
    Xt, yt = X[train_idx], y[train_idx]
    Xv, yv = X[valid_idx], y[valid_idx]
    codes, edges = _bin_features(Xt, params.histogram_bins)

    base = float(np.mean(yt))
    pred_t = np.full(len(yt), base)
    pred_v = np.full(len(yv), base)
    all_rows = np.arange(len(yt), dtype=np.int32)
    ones = np.ones(len(yt))

    trees: list[_Tree] = []
    train_curve, valid_curve = [], []
    best_round, best_loss = -1, np.inf
    for r in range(params.max_trees):
        grad = np.ascontiguousarray(pred_t - yt)
        tree, leaves = _grow_tree(codes, edges, grad, ones, all_rows, params)
        trees.append(tree)
        for rows_leaf, v in leaves:
            pred_t[rows_leaf] += v
        train_curve.append(float(np.mean((pred_t - yt) ** 2)))
        if len(yv):
            pred_v += _FlatTrees([tree], params.max_depth).apply(Xv)
            valid_curve.append(float(np.mean((pred_v - yv) ** 2)))
            if valid_curve[-1] < best_loss - 1e-12:
                best_loss, best_round = valid_curve[-1], r
            elif r - best_round >= params.early_stop_rounds:
                break
    if len(yv) and best_round >= 0:
        trees = trees[: best_round + 1]
        train_curve = train_curve[: best_round + 1]
        valid_curve = valid_curve[: best_round + 1]

    metadata = {
        "kernel_backend": BACKEND,
        "train_examples": int(len(yt)),
        "valid_examples": int(len(yv)),
        "train_loss_curve": train_curve,
        "valid_loss_curve": valid_curve,
    }
    return TrainedGbtRegressor(schema, params, base, trees, metadata)
