"""Training-set construction: features, I/O density, category labels.

The label of a job is 0 when its TCO savings are negative, otherwise the
quantile bucket of its I/O density among the nonnegative-savings jobs of
the training set (bucket N-1 is the densest). Features combine the job's
scheduler resources, calendar fields, trailing same-pipeline history
aggregates, and a bag of metadata tokens.
"""

from __future__ import annotations

import bisect
import csv
import json
import re
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from tierlab.costs import HDD, CostRates, effective_io, tcio_total, tco_savings
from tierlab.trace import Job, Trace

NUMERIC_FEATURES = (
    "num_workers",
    "num_worker_threads",
    "num_buckets",
    "initial_num_buckets",
    "num_shards",
    "records_written",
    "weekday",
    "hour_of_day",
    "avg_tcio",
    "avg_size",
    "avg_lifetime",
    "avg_io_density",
    "has_history",
)

# Feature-group split used by the importance report: historical aggregates,
# metadata tokens, scheduler resources, calendar fields.
FEATURE_GROUPS = {
    "A": ("avg_tcio", "avg_size", "avg_lifetime", "avg_io_density", "has_history"),
    "B": ("tokens",),
    "C": (
        "num_workers",
        "num_worker_threads",
        "num_buckets",
        "initial_num_buckets",
        "num_shards",
        "records_written",
    ),
    "T": ("weekday", "hour_of_day"),
}

_SPLIT_RE = re.compile(r"[^0-9a-zA-Z]+")

DEFAULT_TOKEN_TOP_K = 256


def tokenize(job: Job) -> tuple[str, ...]:
    """Bag of lowercase tokens from the job's string fields (deduplicated)."""
    parts: list[str] = []
    for s in (job.pipeline_id, job.user_id, job.step_name, *job.metadata_tokens):
        parts.extend(p for p in _SPLIT_RE.split(s.lower()) if p)
    return tuple(sorted(set(parts)))


@dataclass(frozen=True)
class FeatureVector:
    """Numeric features aligned with NUMERIC_FEATURES, plus a token bag."""

    numeric: tuple[float, ...]
    tokens: tuple[str, ...]

    def __post_init__(self):
        if len(self.numeric) != len(NUMERIC_FEATURES):
            raise ValueError(
                f"expected {len(NUMERIC_FEATURES)} numeric features, got {len(self.numeric)}"
            )

    def get(self, name: str) -> float:
        return self.numeric[NUMERIC_FEATURES.index(name)]


class FeatureSchema:
    """Maps FeatureVectors onto dense rows: numerics then token indicators."""

    def __init__(self, token_vocab: Sequence[str]):
        self.token_vocab = tuple(token_vocab)
        self._token_index = {t: i for i, t in enumerate(self.token_vocab)}
        if len(self._token_index) != len(self.token_vocab):
            raise ValueError("duplicate tokens in vocabulary")

    @property
    def width(self) -> int:
        return len(NUMERIC_FEATURES) + len(self.token_vocab)

    @property
    def feature_names(self) -> tuple[str, ...]:
        return NUMERIC_FEATURES + tuple(f"tok:{t}" for t in self.token_vocab)

    @classmethod
    def fit(cls, features: Iterable[FeatureVector], top_k: int = DEFAULT_TOKEN_TOP_K) -> "FeatureSchema":
        """Vocabulary = top_k tokens by count, ties broken alphabetically."""
        counts: dict[str, int] = {}
        for f in features:
            for t in f.tokens:
                counts[t] = counts.get(t, 0) + 1
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls([t for t, _ in ranked[:top_k]])

    def row(self, f: FeatureVector) -> np.ndarray:
        out = np.zeros(self.width, dtype=np.float64)
        out[: len(NUMERIC_FEATURES)] = f.numeric
        base = len(NUMERIC_FEATURES)
        for t in f.tokens:
            idx = self._token_index.get(t)
            if idx is not None:
                out[base + idx] = 1.0
        return out

    def matrix(self, features: Sequence[FeatureVector]) -> np.ndarray:
        out = np.zeros((len(features), self.width), dtype=np.float64)
        for i, f in enumerate(features):
            out[i] = self.row(f)
        return out

    def to_json(self) -> str:
        return json.dumps(
            {"numeric_features": list(NUMERIC_FEATURES), "token_vocab": list(self.token_vocab)},
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "FeatureSchema":
        data = json.loads(text)
        if tuple(data["numeric_features"]) != NUMERIC_FEATURES:
            raise ValueError("schema numeric feature list does not match this build")
        return cls(data["token_vocab"])


def io_density(job: Job, rates: CostRates) -> float:
    """Lifetime HDD-normalized I/O per byte of footprint (dimensionless/s)."""
    if job.peak_bytes <= 0:
        raise ValueError(f"job {job.job_id}: zero footprint")
    eff = effective_io(job, rates)
    return eff.tcio_hdd_rate * eff.duration / job.peak_bytes


@dataclass(frozen=True)
class CategoryBoundaries:
    """N-1 quantile buckets over nonnegative-savings I/O density.

    thresholds has exactly N-2 non-decreasing cut points; ties produce
    empty buckets and values equal to a cut point fall in the lower
    bucket (half-open (low, high] intervals).
    """

    n_categories: int
    thresholds: tuple[float, ...]
    training_size: int

    def __post_init__(self):
        if self.n_categories < 2:
            raise ValueError("need at least 2 categories")
        if len(self.thresholds) != self.n_categories - 2:
            raise ValueError(
                f"expected {self.n_categories - 2} thresholds, got {len(self.thresholds)}"
            )
        if any(b < a for a, b in zip(self.thresholds, self.thresholds[1:])):
            raise ValueError("thresholds must be non-decreasing")

    def to_json(self) -> str:
        return json.dumps(
            {
                "n_categories": self.n_categories,
                "thresholds": list(self.thresholds),
                "training_size": self.training_size,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "CategoryBoundaries":
        data = json.loads(text)
        return cls(
            n_categories=int(data["n_categories"]),
            thresholds=tuple(float(t) for t in data["thresholds"]),
            training_size=int(data["training_size"]),
        )


def fit_boundaries(densities: Sequence[float], n_categories: int) -> CategoryBoundaries:
    """Quantile cut points giving n_categories - 1 equal-count buckets."""
    values = np.asarray(densities, dtype=np.float64)
    if values.size < n_categories - 1:
        raise ValueError(
            f"need at least {n_categories - 1} nonnegative-savings examples, got {values.size}"
        )
    n_buckets = n_categories - 1
    qs = [j / n_buckets for j in range(1, n_buckets)]
    thresholds = tuple(float(t) for t in np.quantile(values, qs)) if qs else ()
    return CategoryBoundaries(
        n_categories=n_categories, thresholds=thresholds, training_size=int(values.size)
    )


def assign_category(m: float, n: float, boundaries: CategoryBoundaries) -> int:
    """0 for negative savings, else the density bucket index in [1, N-1]."""
    if m < 0:
        return 0
    return 1 + bisect.bisect_left(boundaries.thresholds, n)


@dataclass(frozen=True)
class TrainingExample:
    features: FeatureVector
    m: float  # TCO savings, dollars
    n: float  # io_density
    category: int
    job_id: str


def build_features(trace: Trace, rates: CostRates) -> list[FeatureVector]:
    """Per-job features, one per trace job in trace order.

    Historical aggregates come only from same-pipeline jobs that completed
    strictly before the job's arrival (e_j < a_i), so truncating the trace
    at any time never changes the features of earlier arrivals.
    """
    by_pipeline: dict[str, list[Job]] = {}
    for job in trace.jobs:
        by_pipeline.setdefault(job.pipeline_id, []).append(job)

    # Per pipeline: jobs sorted by end time, prefix sums of the aggregates.
    history: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for pid, jobs in by_pipeline.items():
        done = sorted(jobs, key=lambda j: (j.end_time, j.job_id))
        ends = np.array([j.end_time for j in done], dtype=np.float64)
        stats = np.zeros((len(done) + 1, 4), dtype=np.float64)
        for i, j in enumerate(done):
            stats[i + 1] = stats[i] + (
                tcio_total(j, HDD, rates, j.end_time),
                float(j.peak_bytes),
                j.lifetime,
                io_density(j, rates),
            )
        history[pid] = (ends, stats)

    out = []
    for job in trace.jobs:
        ends, stats = history[job.pipeline_id]
        k = int(np.searchsorted(ends, job.arrival_time, side="left"))
        if k > 0:
            acc = (stats[k] - stats[0]) / k
            hist = (float(acc[0]), float(acc[1]), float(acc[2]), float(acc[3]), 1.0)
        else:
            hist = (0.0, 0.0, 0.0, 0.0, 0.0)
        r = job.resources
        numeric = (
            float(r.num_workers),
            float(r.num_worker_threads),
            float(r.num_buckets),
            float(r.initial_num_buckets),
            float(r.num_shards),
            float(r.records_written),
            float(r.weekday),
            float(r.hour_of_day),
            *hist,
        )
        out.append(FeatureVector(numeric=numeric, tokens=tokenize(job)))
    return out


def build_training_set(
    trace: Trace,
    rates: CostRates,
    n_categories: int,
    boundaries: Optional[CategoryBoundaries] = None,
) -> tuple[list[TrainingExample], CategoryBoundaries]:
    """Label every trace job; fit boundaries here unless given ones to reuse.

    Passing existing boundaries labels an evaluation trace against the
    cut points fitted on a training trace.
    """
    features = build_features(trace, rates)
    ms = [tco_savings(job, rates) for job in trace.jobs]
    ns = [io_density(job, rates) for job in trace.jobs]
    if boundaries is None:
        nonneg = [n for m, n in zip(ms, ns) if m >= 0]
        boundaries = fit_boundaries(nonneg, n_categories)
    elif boundaries.n_categories != n_categories:
        raise ValueError("boundaries were fitted for a different category count")
    examples = [
        TrainingExample(
            features=f,
            m=m,
            n=n,
            category=assign_category(m, n, boundaries),
            job_id=job.job_id,
        )
        for f, m, n, job in zip(features, ms, ns, trace.jobs)
    ]
    return examples, boundaries


def save_training_set(examples: Sequence[TrainingExample], boundaries: CategoryBoundaries, path) -> None:
    """CSV with one row per example; boundaries in a .boundaries.json sidecar.

    Columns: job_id, category, m, n, the NUMERIC_FEATURES in order, then
    a space-joined token bag (tokens never contain whitespace).
    """
    path = str(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["job_id", "category", "m", "n", *NUMERIC_FEATURES, "tokens"])
        for ex in examples:
            w.writerow(
                [
                    ex.job_id,
                    ex.category,
                    repr(ex.m),
                    repr(ex.n),
                    *[repr(v) for v in ex.features.numeric],
                    " ".join(ex.features.tokens),
                ]
            )
    with open(_sidecar_path(path), "w", encoding="utf-8") as fh:
        fh.write(boundaries.to_json() + "\n")


def load_training_set(path) -> tuple[list[TrainingExample], CategoryBoundaries]:
    path = str(path)
    examples = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        expected = ["job_id", "category", "m", "n", *NUMERIC_FEATURES, "tokens"]
        if header != expected:
            raise ValueError(f"unexpected training CSV header: {header}")
        for row in reader:
            job_id, category, m, n = row[0], int(row[1]), float(row[2]), float(row[3])
            numeric = tuple(float(v) for v in row[4 : 4 + len(NUMERIC_FEATURES)])
            tokens = tuple(row[-1].split()) if row[-1] else ()
            examples.append(
                TrainingExample(
                    features=FeatureVector(numeric=numeric, tokens=tokens),
                    m=m,
                    n=n,
                    category=category,
                    job_id=job_id,
                )
            )
    with open(_sidecar_path(path), "r", encoding="utf-8") as fh:
        boundaries = CategoryBoundaries.from_json(fh.read())
    return examples, boundaries


def _sidecar_path(path: str) -> str:
    base = path[:-4] if path.endswith(".csv") else path
    return base + ".boundaries.json"
