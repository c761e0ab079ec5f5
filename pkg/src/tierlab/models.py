"""Category predictors besides the boosted-tree model, and model analyses.

A category model maps a job's features to an integer in [0, N-1]. The
clairvoyant and hash models key off job identity instead of features, so
policies always go through predict_for(job, features); feature-driven
models simply ignore the job argument.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from tierlab.gbt import (
    GbtParams,
    TrainedGbt,
    TrainedGbtRegressor,
    ensemble_margins,
    fit_classifier_matrix,
    train_gbt_regressor,
)
from tierlab.labels import (
    FEATURE_GROUPS,
    NUMERIC_FEATURES,
    FeatureSchema,
    FeatureVector,
    TrainingExample,
)
from tierlab.trace import Job


class CategoryModel:
    """Base for predictors; subclasses set n_categories and a name."""

    n_categories: int
    name: str = "model"

    def predict(self, features: FeatureVector) -> int:
        raise NotImplementedError

    def predict_for(self, job: Job, features: FeatureVector) -> int:
        return self.predict(features)


class TrueCategoryModel(CategoryModel):
    """Clairvoyant lookup of ground-truth labels by job_id."""

    name = "true"

    def __init__(self, labels: Mapping[str, int], n_categories: int):
        self.labels = dict(labels)
        self.n_categories = n_categories

    @classmethod
    def from_examples(cls, examples: Sequence[TrainingExample], n_categories: int) -> "TrueCategoryModel":
        return cls({ex.job_id: ex.category for ex in examples}, n_categories)

    def predict(self, features: FeatureVector) -> int:
        raise LookupError("clairvoyant model resolves by job identity; use predict_for")

    def predict_for(self, job: Job, features: FeatureVector) -> int:
        try:
            return self.labels[job.job_id]
        except KeyError:
            raise LookupError(f"no ground-truth label for job {job.job_id!r}") from None


class HashCategoryModel(CategoryModel):
    """Stable hash of pipeline_id onto [1, N-1]; never predicts 0.

    sha256 keeps the bucket distribution uniform over distinct pipeline
    ids and identical across processes and runs.
    """

    name = "hash"

    def __init__(self, n_categories: int):
        if n_categories < 2:
            raise ValueError("need at least 2 categories")
        self.n_categories = n_categories

    def category_for_pipeline(self, pipeline_id: str) -> int:
        digest = hashlib.sha256(pipeline_id.encode("utf-8")).digest()
        return 1 + int.from_bytes(digest[:8], "big") % (self.n_categories - 1)

    def predict(self, features: FeatureVector) -> int:
        raise LookupError("hash model resolves by pipeline identity; use predict_for")

    def predict_for(self, job: Job, features: FeatureVector) -> int:
        return self.category_for_pipeline(job.pipeline_id)


class PrecomputedCategoryModel(CategoryModel):
    """Frozen per-job predictions, for replaying batch model output."""

    def __init__(self, decisions: Mapping[str, int], n_categories: int, name: str = "precomputed"):
        self.decisions = dict(decisions)
        self.n_categories = n_categories
        self.name = name

    @classmethod
    def from_model(cls, model, jobs: Sequence[Job], features: Sequence[FeatureVector]) -> "PrecomputedCategoryModel":
        """Batch-predict a trace once; single-row predictions must agree."""
        if isinstance(model, TrainedGbt):
            cats = model.predict_batch(features)
            decisions = {job.job_id: int(c) for job, c in zip(jobs, cats)}
        else:
            decisions = {job.job_id: model.predict_for(job, f) for job, f in zip(jobs, features)}
        return cls(decisions, model.n_categories, name=getattr(model, "name", "precomputed"))

    def predict(self, features: FeatureVector) -> int:
        raise LookupError("precomputed model resolves by job identity; use predict_for")

    def predict_for(self, job: Job, features: FeatureVector) -> int:
        try:
            return self.decisions[job.job_id]
        except KeyError:
            raise LookupError(f"no precomputed category for job {job.job_id!r}") from None


class ConstantCategoryModel(CategoryModel):
    """Always the same category; scripted tests use this."""

    name = "constant"

    def __init__(self, category: int, n_categories: int):
        if not (0 <= category < n_categories):
            raise ValueError("category out of range")
        self.category = category
        self.n_categories = n_categories

    def predict(self, features: FeatureVector) -> int:
        return self.category


class LifetimePredictor:
    """Boosted-tree mean lifetime plus per-pipeline residual spread.

    mu comes from a squared-loss fit on log-lifetime; sigma is the
    standard deviation of (lifetime - mu) within the job's pipeline,
    falling back to the global residual spread for unseen or
    single-sample pipelines.
    """

    def __init__(self, regressor: TrainedGbtRegressor, sigma_by_pipeline: Mapping[str, float],
                 sigma_global: float):
        self.regressor = regressor
        self.sigma_by_pipeline = dict(sigma_by_pipeline)
        self.sigma_global = float(sigma_global)

    def predict_mu(self, features: FeatureVector) -> float:
        return float(np.exp(self.regressor.predict(features)))

    def predict_sigma(self, pipeline_id: Optional[str]) -> float:
        if pipeline_id is None:
            return self.sigma_global
        return self.sigma_by_pipeline.get(pipeline_id, self.sigma_global)

    def predict_for(self, job: Job, features: FeatureVector) -> tuple[float, float]:
        return self.predict_mu(features), self.predict_sigma(job.pipeline_id)

    def save(self, path) -> None:
        payload = {
            "format": "tierlab-lifetime",
            "version": 1,
            "sigma_by_pipeline": self.sigma_by_pipeline,
            "sigma_global": self.sigma_global,
            "regressor": json.loads(self.regressor.to_json()),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "LifetimePredictor":
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        if data.get("format") != "tierlab-lifetime":
            raise ValueError("not a lifetime model file")
        reg = TrainedGbtRegressor.from_json(json.dumps(data["regressor"]))
        return cls(reg, data["sigma_by_pipeline"], data["sigma_global"])


def train_lifetime_regressor(features: Sequence[FeatureVector], lifetimes: Sequence[float],
                             pipeline_ids: Optional[Sequence[str]] = None,
                             params: Optional[GbtParams] = None) -> LifetimePredictor:
    """Fit the mean/spread lifetime predictor used by the TTL baseline."""
    if len(features) == 0:
        raise ValueError("empty training set")
    if any(lt <= 0 for lt in lifetimes):
        raise ValueError("lifetimes must be positive")
    params = params if params is not None else GbtParams()
    y_log = np.log(np.asarray(lifetimes, dtype=np.float64))
    regressor = train_gbt_regressor(features, y_log, params)

    mu = np.exp(regressor.predict_matrix(regressor.schema.matrix(features)))
    residuals = np.asarray(lifetimes, dtype=np.float64) - mu
    sigma_global = float(np.std(residuals, ddof=1)) if len(residuals) > 1 else 0.0
    sigma_by_pipeline: dict[str, float] = {}
    if pipeline_ids is not None:
        groups: dict[str, list[float]] = {}
        for pid, r in zip(pipeline_ids, residuals):
            groups.setdefault(pid, []).append(float(r))
        for pid, rs in groups.items():
            if len(rs) > 1:
                sigma_by_pipeline[pid] = float(np.std(np.asarray(rs), ddof=1))
    return LifetimePredictor(regressor, sigma_by_pipeline, sigma_global)


def roc_auc(scores: np.ndarray, positives: np.ndarray) -> float:
    """Rank-based AUC (Mann-Whitney with average ranks for ties)."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = len(positives) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative examples")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum = float(ranks[positives].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass(frozen=True)
class GroupImportance:
    group_names: tuple[str, ...]
    categories: tuple[int, ...]
    # scores[i][j]: normalized AUC drop of categories[i] when group j is
    # removed; each row sums to 1.
    scores: tuple[tuple[float, ...], ...]

    def to_csv_rows(self) -> list[list]:
        rows = [["category", *self.group_names]]
        for cat, row in zip(self.categories, self.scores):
            rows.append([cat, *[repr(v) for v in row]])
        return rows


def feature_group_importance(dataset: Sequence[TrainingExample], n_categories: int,
                             params: Optional[GbtParams] = None,
                             groups: Optional[Mapping[str, Sequence[str]]] = None,
                             trainer: Optional[Callable] = None) -> GroupImportance:
    """Per-category feature-group importance by ablation.

    Trains the model once on all features and once per group with that
    group's columns removed, then measures the one-vs-rest AUC drop of
    each category's validation-split score. Drops are clamped at 0 and
    normalized per category to sum to 1 (uniform when nothing drops).
    """
    params = params if params is not None else GbtParams()
    groups = dict(groups) if groups is not None else dict(FEATURE_GROUPS)
    if params.validation_fraction <= 0:
        raise ValueError("importance needs a validation split")
    schema = FeatureSchema.fit([ex.features for ex in dataset])
    X = schema.matrix([ex.features for ex in dataset])
    y = np.array([ex.category for ex in dataset], dtype=np.int64)
    present = sorted(set(int(c) for c in y))

    def columns_for(group_fields) -> list[int]:
        cols: list[int] = []
        for f in group_fields:
            if f == "tokens":
                cols.extend(range(len(NUMERIC_FEATURES), schema.width))
            else:
                cols.append(NUMERIC_FEATURES.index(f))
        return cols

    fit = trainer if trainer is not None else fit_classifier_matrix

    def valid_probs(X_cols: np.ndarray):
        base, trees, meta = fit(X_cols, y, n_categories, params)
        vidx = np.asarray(meta["valid_indices"], dtype=np.int64)
        margins = ensemble_margins(base, trees, params, X_cols[vidx])
        z = margins - margins.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True), vidx

    p_full, vidx = valid_probs(X)
    yv = y[vidx]
    for c in present:
        if not np.any(yv == c) or np.all(yv == c):
            raise ValueError(f"category {c} lacks both classes in the validation split")

    aucs_full = {c: roc_auc(p_full[:, c], yv == c) for c in present}
    group_names = tuple(groups.keys())
    drops = np.zeros((len(present), len(groups)))
    for gi, fields in enumerate(groups.values()):
        removed = set(columns_for(fields))
        keep = [i for i in range(schema.width) if i not in removed]
        p_ablated, vidx2 = valid_probs(np.ascontiguousarray(X[:, keep]))
        assert np.array_equal(vidx, vidx2)
        for ci, c in enumerate(present):
            drops[ci, gi] = max(0.0, aucs_full[c] - roc_auc(p_ablated[:, c], yv == c))

    scores = np.zeros_like(drops)
    for ci in range(len(present)):
        total = drops[ci].sum()
        if total > 0:
            scores[ci] = drops[ci] / total
        else:
            scores[ci] = 1.0 / len(groups)
    return GroupImportance(
        group_names=group_names,
        categories=tuple(present),
        scores=tuple(tuple(float(v) for v in row) for row in scores),
    )
