"""Online placement policies.

Each policy sees one arrival at a time (job, features, observation) and
answers SSD or HDD. None of them may read post-hoc job facts; anything
beyond the arrival row must come from predictions or from jobs that
already completed.
"""

from __future__ import annotations

from typing import Optional

from tierlab.costs import HDD, SSD, CostRates, tco_savings
from tierlab.labels import FeatureVector
from tierlab.models import CategoryModel, LifetimePredictor
from tierlab.sim import Observation
from tierlab.trace import Job

DEFAULT_TOLERANCE = (0.01, 0.15)
DEFAULT_LOOKBACK = 900.0
DEFAULT_DECISION_INTERVAL = 900.0
DEFAULT_TTL = 3600.0
DEFAULT_REBUILD_INTERVAL = 900.0
DEFAULT_STATS_WINDOW = 86400.0


class PlacementPolicy:
    """Base: on_arrival decides, on_end observes completions."""

    name = "policy"

    def on_arrival(self, job: Job, features: FeatureVector, obs: Observation) -> str:
        raise NotImplementedError

    def on_end(self, job: Job, record, t: float) -> None:
        pass


class AlwaysPolicy(PlacementPolicy):
    def __init__(self, device: str):
        if device not in (SSD, HDD):
            raise ValueError(f"unknown device {device!r}")
        self.device = device
        self.name = f"always-{device.lower()}"

    def on_arrival(self, job, features, obs) -> str:
        return self.device


class FirstFitPolicy(PlacementPolicy):
    """SSD iff the whole peak footprint fits in free space right now."""

    name = "firstfit"

    def on_arrival(self, job, features, obs) -> str:
        return SSD if job.peak_bytes <= obs.free_bytes else HDD


def admission_set_rebuild(stats, ssd_quota: float) -> frozenset:
    """Greedy admission set over per-category trailing stats.

    stats maps a category key to (trailing tco_savings, historical peak
    concurrent space). Categories are ranked by savings descending with
    the key as tie-break; each is admitted if its peak still fits next
    to the peaks already admitted. Non-positive savings never enter.
    """
    ranked = sorted(stats.items(), key=lambda kv: (-kv[1][0], kv[0]))
    admitted = []
    used = 0.0
    for key, (savings, peak) in ranked:
        if savings <= 0:
            break
        if used + peak <= ssd_quota:
            admitted.append(key)
            used += peak
    return frozenset(admitted)


class HeuristicAdmissionPolicy(PlacementPolicy):
    """Admission set over recurring (pipeline_id, step_name) categories.

    Every rebuild interval, completed jobs from the trailing stats window
    are grouped by category; categories are ranked by total TCO savings
    and added greedily while the sum of their historical peak concurrent
    footprints stays within the quota. Only positive-savings categories
    are admitted. Arrivals go to SSD iff their category is in the set.
    """

    name = "heuristic"

    def __init__(self, rates: CostRates, ssd_quota: float,
                 rebuild_interval: float = DEFAULT_REBUILD_INTERVAL,
                 stats_window: float = DEFAULT_STATS_WINDOW):
        if rebuild_interval <= 0 or stats_window <= 0:
            raise ValueError("intervals must be positive")
        self.rates = rates
        self.ssd_quota = ssd_quota
        self.rebuild_interval = rebuild_interval
        self.stats_window = stats_window
        self.completed: list[tuple[float, tuple[str, str], float, float, int, float]] = []
        self.admission: frozenset[tuple[str, str]] = frozenset()
        self.last_rebuild: Optional[float] = None

    @staticmethod
    def category_key(job: Job) -> tuple[str, str]:
        return (job.pipeline_id, job.step_name)

    def on_end(self, job, record, t) -> None:
        self.completed.append(
            (t, self.category_key(job), job.arrival_time, job.end_time, job.peak_bytes,
             tco_savings(job, self.rates))
        )

    def _rebuild(self, t: float) -> None:
        cutoff = t - self.stats_window
        self.completed = [c for c in self.completed if c[0] > cutoff]
        by_key: dict[tuple[str, str], list] = {}
        for _, key, a, e, s, sav in self.completed:
            by_key.setdefault(key, []).append((a, e, s, sav))
        stats: dict[tuple[str, str], tuple[float, float]] = {}
        for key, rows in by_key.items():
            total_savings = sum(r[3] for r in rows)
            events = []
            for a, e, s, _ in rows:
                events.append((a, s))
                events.append((e, -s))
            events.sort()
            peak = cur = 0.0
            for _, delta in events:
                cur += delta
                peak = max(peak, cur)
            stats[key] = (total_savings, peak)
        self.admission = admission_set_rebuild(stats, self.ssd_quota)
        self.last_rebuild = t

    def on_arrival(self, job, features, obs) -> str:
        if self.last_rebuild is None or obs.time >= self.last_rebuild + self.rebuild_interval:
            self._rebuild(obs.time)
        return SSD if self.category_key(job) in self.admission else HDD


class LifetimeTtlPolicy(PlacementPolicy):
    """Admit jobs predicted to die before the TTL; evict at mu + sigma.

    Admission needs mu + sigma strictly below the TTL. Admitted jobs
    still on SSD at arrival + mu + sigma are evicted and finish on HDD.
    """

    name = "lifetime"

    def __init__(self, predictor: LifetimePredictor, ttl: float = DEFAULT_TTL):
        if ttl <= 0:
            raise ValueError("ttl must be positive")
        self.predictor = predictor
        self.ttl = ttl
        self._evictions: dict[str, float] = {}

    def on_arrival(self, job, features, obs) -> str:
        mu, sigma = self.predictor.predict_for(job, features)
        horizon = mu + sigma
        if horizon < self.ttl:
            self._evictions[job.job_id] = job.arrival_time + horizon
            return SSD
        return HDD

    def evict_at(self, job: Job) -> Optional[float]:
        return self._evictions.get(job.job_id)


class AdaptiveCategoryPolicy(PlacementPolicy):
    """Admission threshold on predicted categories, tuned by spillover.

    Keeps an admission category threshold ACT in [1, N-1]. At most once
    per decision interval t_l, the look-back spillover percentage h over
    jobs arriving within t_w is compared against the tolerance range:
    h below it steps ACT down (admit more), h above steps ACT up. Each
    arrival then goes to SSD iff its predicted category >= ACT.
    """

    _POLICY_NAMES = {
        "gbt": "adaptive-ranking",
        "true": "adaptive-ranking-true",
        "hash": "adaptive-hash",
    }

    def __init__(self, model: CategoryModel,
                 tolerance: tuple[float, float] = DEFAULT_TOLERANCE,
                 t_w: float = DEFAULT_LOOKBACK,
                 t_l: float = DEFAULT_DECISION_INTERVAL):
        low, high = tolerance
        if not (0.0 <= low < high <= 1.0):
            raise ValueError("tolerance range must satisfy 0 <= low < high <= 1")
        if t_w <= 0 or t_l <= 0:
            raise ValueError("t_w and t_l must be positive")
        if model.n_categories < 2:
            raise ValueError("adaptive policy needs at least 2 categories")
        self.model = model
        self.tolerance_low = low
        self.tolerance_high = high
        self.t_w = t_w
        self.t_l = t_l
        self.n_categories = model.n_categories
        self.act = 1
        self.t_d = 0.0
        self.act_series: list[tuple[float, int, float]] = []
        self.name = self._POLICY_NAMES.get(
            getattr(model, "name", ""), f"adaptive-{getattr(model, 'name', 'model')}"
        )

    def on_arrival(self, job, features, obs) -> str:
        t = obs.time
        if t >= self.t_d + self.t_l:
            h = obs.spillover(self.t_w)
            if h < self.tolerance_low:
                self.act = max(1, self.act - 1)
            elif h > self.tolerance_high:
                self.act = min(self.n_categories - 1, self.act + 1)
            self.t_d = t
            self.act_series.append((t, self.act, h))
        category = self.model.predict_for(job, features)
        return SSD if category >= self.act else HDD


class OracleReplayPolicy(PlacementPolicy):
    """Replays a precomputed placement vector inside the simulator."""

    name = "oracle-replay"

    def __init__(self, placements: dict[str, bool]):
        self.placements = dict(placements)

    def on_arrival(self, job, features, obs) -> str:
        try:
            return SSD if self.placements[job.job_id] else HDD
        except KeyError:
            raise LookupError(f"no precomputed placement for job {job.job_id!r}") from None
