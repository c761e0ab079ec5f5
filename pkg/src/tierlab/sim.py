"""Event-driven tiering simulator.

Jobs arrive in time order; the policy picks SSD or HDD per job under an
SSD byte quota M. Two footprint models: `constant` (the whole peak
footprint exists from arrival to end, allocation happens once at
arrival) and `linear_growth` (the footprint ramps linearly from 0 to the
peak over a fraction of the lifetime, and a job spills at the first
instant an allocation increment fails). Spilled jobs never reclaim SSD
space later; there is no migration.

Realized costs charge each job's SSD-resident byte-second share at SSD
rates and the remainder at HDD rates, against an all-HDD baseline.
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from tierlab.costs import HDD, SSD, CostRates, tcio_total, tco
from tierlab.labels import FeatureVector, build_features
from tierlab.trace import Job, Trace

CONSTANT = "constant"
LINEAR_GROWTH = "linear_growth"

# Event priorities at equal timestamps: frees before caps before fill
# checks before new arrivals.
_P_END = 0
_P_GROWTH_END = 1
_P_SSD_FULL = 2
_P_ARRIVAL = 3


@dataclass(frozen=True)
class SimConfig:
    ssd_quota: float  # bytes, may be math.inf
    rates: CostRates
    footprint_model: str = CONSTANT
    growth_fraction: float = 0.5  # linear_growth: ramp lasts this fraction of the lifetime
    observation_window: float = 900.0  # seconds, for the sampled spillover series
    record_act_series: bool = False

    def validate(self) -> None:
        if self.ssd_quota < 0:
            raise ValueError("ssd_quota must be >= 0")
        if self.footprint_model not in (CONSTANT, LINEAR_GROWTH):
            raise ValueError(f"unknown footprint_model {self.footprint_model!r}")
        if not (0.0 < self.growth_fraction <= 1.0):
            raise ValueError("growth_fraction out of (0, 1]")
        if self.observation_window <= 0:
            raise ValueError("observation_window must be > 0")


class PlacementRecord:
    """Placement outcome and SSD-residency trajectory of one job.

    alloc_at(t) interpolates the recorded allocation breakpoints, which
    is exact because allocation is piecewise linear between touches.
    """

    __slots__ = (
        "job_id", "scheduled_device", "t_s", "evicted_at", "arrival", "end",
        "peak_bytes", "footprint_model", "growth_duration", "ssd_byte_seconds",
        "realized_tco", "realized_tcio", "final_spilled_bytes",
        "_points", "_rate", "_cap", "_live_until",
    )

    def __init__(self, job: Job, device: str, config: SimConfig):
        self.job_id = job.job_id
        self.scheduled_device = device
        self.t_s: Optional[float] = None
        self.evicted_at: Optional[float] = None
        self.arrival = job.arrival_time
        self.end = job.end_time
        self.peak_bytes = job.peak_bytes
        self.footprint_model = config.footprint_model
        if config.footprint_model == LINEAR_GROWTH:
            self.growth_duration = config.growth_fraction * (job.end_time - job.arrival_time)
        else:
            self.growth_duration = 0.0
        self.ssd_byte_seconds = 0.0
        self.realized_tco = 0.0
        self.realized_tcio = 0.0
        self.final_spilled_bytes = 0.0
        self._points: list[tuple[float, float]] = [(job.arrival_time, 0.0)]
        self._rate = 0.0
        self._cap = 0.0
        self._live_until = job.end_time

    def footprint_at(self, t: float) -> float:
        if t < self.arrival or t >= self.end:
            return 0.0
        if self.growth_duration <= 0.0:
            return float(self.peak_bytes)
        return min(float(self.peak_bytes), self.peak_bytes * (t - self.arrival) / self.growth_duration)

    def alloc_at(self, t: float) -> float:
        if self.scheduled_device != SSD or t < self.arrival:
            return 0.0
        last_t, last_a = self._points[-1]
        if t >= last_t:
            if t >= self._live_until:
                t = self._live_until
            return min(self._cap, last_a + self._rate * (t - last_t)) if self._rate else last_a
        for (t0, a0), (t1, a1) in zip(self._points, self._points[1:]):
            if t <= t1:
                if t1 == t0:
                    return a1
                return a0 + (a1 - a0) * (t - t0) / (t1 - t0)
        return last_a

    def spilled_bytes_at(self, t: float) -> float:
        if self.scheduled_device != SSD:
            return 0.0
        if t >= self._live_until:
            # Sticky after release so completed jobs keep reporting the
            # spill they actually suffered.
            return self.final_spilled_bytes
        return max(0.0, self.footprint_at(t) - self.alloc_at(t))

    def footprint_byte_seconds(self) -> float:
        life = self.end - self.arrival
        return self.peak_bytes * (life - 0.5 * self.growth_duration)

    @property
    def ssd_fraction(self) -> float:
        denom = self.footprint_byte_seconds()
        return self.ssd_byte_seconds / denom if denom > 0 else 0.0


def spillover_tcio(record: PlacementRecord, job: Job, t: float, rates: CostRates) -> float:
    """This job's I/O load pushed onto HDD despite an SSD placement.

    byte_spill_fraction * ((t - t_s)/(t - t_a)) * its HDD load up to t;
    zero for HDD placements, unspilled jobs, and t at or before the
    spill start.
    """
    if t < job.arrival_time:
        raise ValueError(f"t={t} precedes arrival of job {job.job_id}")
    if record.scheduled_device != SSD or record.t_s is None or t <= record.t_s:
        return 0.0
    byte_fraction = record.spilled_bytes_at(t) / job.peak_bytes
    time_fraction = (t - record.t_s) / (t - job.arrival_time)
    return byte_fraction * time_fraction * tcio_total(job, HDD, rates, t)


def spillover_percentage(history: Sequence[tuple[PlacementRecord, Job]], t: float,
                         rates: CostRates) -> float:
    """Spilled share of the total I/O load scheduled onto SSD; in [0, 1]."""
    num = 0.0
    denom = 0.0
    for record, job in history:
        if record.scheduled_device != SSD:
            continue
        denom += tcio_total(job, HDD, rates, max(t, job.arrival_time))
        num += spillover_tcio(record, job, t, rates)
    return num / denom if denom > 0 else 0.0


def trace_spillover(records: dict, trace: Trace, rates: CostRates) -> float:
    """Cumulative spilled share over a finished run, in [0, 1].

    Unlike the windowed signal this measures every SSD-scheduled job at
    its own completion instant, so nothing washes out at the trace end.
    """
    num = 0.0
    denom = 0.0
    for job in trace.jobs:
        record = records[job.job_id]
        if record.scheduled_device != SSD:
            continue
        denom += tcio_total(job, HDD, rates, job.end_time)
        num += spillover_tcio(record, job, job.end_time, rates)
    return num / denom if denom > 0 else 0.0


@dataclass(frozen=True)
class Observation:
    """What a policy may see at an arrival: clock, free space, spillover."""

    time: float
    free_bytes: float
    _spill_fn: Callable[[float], float] = field(repr=False)

    def spillover(self, t_w: float) -> float:
        """P_SpilloverTCIO over jobs arriving in (time - t_w, time]."""
        return self._spill_fn(t_w)


@dataclass
class SimResult:
    policy_name: str
    config: SimConfig
    records: dict[str, PlacementRecord]
    baseline_tco: float
    realized_tco: float
    baseline_tcio: float
    realized_tcio: float
    total_tco_savings_percent: float  # fraction: 1 - realized/baseline
    total_tcio_savings_percent: float
    peak_ssd_bytes: float
    spillover_series: list[tuple[float, float]]
    act_series: Optional[list[tuple[float, int, float]]] = None

    @property
    def n_ssd_scheduled(self) -> int:
        return sum(1 for r in self.records.values() if r.scheduled_device == SSD)

    @property
    def n_spilled(self) -> int:
        return sum(1 for r in self.records.values() if r.t_s is not None)


class _Sim:
    def __init__(self, trace: Trace, policy, config: SimConfig,
                 features: Optional[Sequence[FeatureVector]]):
        self.trace = trace
        self.policy = policy
        self.config = config
        self.rates = config.rates
        self.features = features if features is not None else build_features(trace, config.rates)
        if len(self.features) != len(trace.jobs):
            raise ValueError("feature list does not match the trace")
        self.M = float(config.ssd_quota)
        self.linear = config.footprint_model == LINEAR_GROWTH

        self.records: dict[str, PlacementRecord] = {}
        self.jobs_by_id = {job.job_id: job for job in trace.jobs}
        self.alloc_total = 0.0
        self.rate_total = 0.0
        self.peak_alloc = 0.0
        self.now = 0.0
        self.fill_seq = 0
        self.heap: list = []
        self.seq = 0
        self.growing: dict[str, Job] = {}
        self.ended: set[str] = set()
        # (arrival, job, record) in arrival order, for window observations
        self.history: list[tuple[float, Job, PlacementRecord]] = []
        self.spillover_series: list[tuple[float, float]] = []

    def push(self, t: float, prio: int, kind: str, payload) -> None:
        heapq.heappush(self.heap, (t, prio, self.seq, kind, payload))
        self.seq += 1

    def advance(self, t: float) -> None:
        if t > self.now:
            if self.rate_total > 0.0:
                self.alloc_total = min(self.M, self.alloc_total + self.rate_total * (t - self.now))
            self.now = t
        self.peak_alloc = max(self.peak_alloc, self.alloc_total)

    def touch(self, record: PlacementRecord, t: float) -> float:
        """Integrate the job's allocation up to t; returns current alloc."""
        last_t, last_a = record._points[-1]
        if t <= last_t:
            return last_a
        new_a = min(record._cap, last_a + record._rate * (t - last_t)) if record._rate else last_a
        record.ssd_byte_seconds += 0.5 * (last_a + new_a) * (t - last_t)
        record._points.append((t, new_a))
        return new_a

    def free_bytes(self) -> float:
        return max(0.0, self.M - self.alloc_total)

    def invalidate_fill(self) -> None:
        self.fill_seq += 1
        if math.isinf(self.M) or self.rate_total <= 1e-12:
            return
        free = self.M - self.alloc_total
        if free > 0.0:
            self.push(self.now + free / self.rate_total, _P_SSD_FULL, "ssd_full", self.fill_seq)

    def window_spillover(self, t: float, t_w: float) -> float:
        window = []
        for a, job, record in reversed(self.history):
            if a <= t - t_w:
                break
            if a <= t:
                window.append((record, job))
        return spillover_percentage(window, t, self.rates)

    def freeze_growing(self, t: float) -> None:
        for job_id, job in list(self.growing.items()):
            record = self.records[job_id]
            self.touch(record, t)
            record._rate = 0.0
            if record.t_s is None:
                record.t_s = t
        self.growing.clear()
        self.rate_total = 0.0
        self.alloc_total = min(self.alloc_total, self.M)

    def on_arrival(self, job: Job, feat: FeatureVector) -> None:
        t = job.arrival_time
        obs = Observation(time=t, free_bytes=self.free_bytes(),
                          _spill_fn=lambda t_w, _t=t: self.window_spillover(_t, t_w))
        device = self.policy.on_arrival(job, feat, obs)
        if device not in (SSD, HDD):
            raise ValueError(f"policy returned invalid device {device!r}")
        record = PlacementRecord(job, device, self.config)
        self.records[job.job_id] = record
        self.history.append((t, job, record))

        if device == SSD:
            if self.linear:
                gd = record.growth_duration
                if self.free_bytes() <= 0.0:
                    record.t_s = t  # no room for even the first increment
                elif gd <= 0.0:
                    self.alloc_now(record, float(job.peak_bytes))
                else:
                    record._rate = job.peak_bytes / gd
                    record._cap = float(job.peak_bytes)
                    self.growing[job.job_id] = job
                    self.rate_total += record._rate
                    self.push(t + gd, _P_GROWTH_END, "growth_end", job.job_id)
                    self.invalidate_fill()
            else:
                self.alloc_now(record, min(float(job.peak_bytes), self.free_bytes()))
                if record.alloc_at(t) < job.peak_bytes:
                    record.t_s = t
            evict_fn = getattr(self.policy, "evict_at", None)
            if evict_fn is not None:
                evict_t = evict_fn(job)
                if evict_t is not None and evict_t < job.end_time:
                    self.push(evict_t, _P_END, "evict", job.job_id)

        self.push(job.end_time, _P_END, "end", job.job_id)
        self.spillover_series.append((t, self.window_spillover(t, self.config.observation_window)))

    def alloc_now(self, record: PlacementRecord, amount: float) -> None:
        record._points[-1] = (record._points[-1][0], amount)
        record._cap = amount
        self.alloc_total += amount
        self.peak_alloc = max(self.peak_alloc, self.alloc_total)
        self.invalidate_fill()

    def release(self, record: PlacementRecord, t: float, evicted: bool) -> None:
        alloc = self.touch(record, t)
        if record._rate > 0.0:
            self.rate_total -= record._rate
            record._rate = 0.0
            self.growing.pop(record.job_id, None)
        self.alloc_total = max(0.0, self.alloc_total - alloc)
        # The footprint the instant before release: at the job's own end
        # it is the full peak (footprint_at(end) is already past it).
        live_fp = record.footprint_at(t) if t < record.end else float(record.peak_bytes)
        record.final_spilled_bytes = max(0.0, live_fp - alloc)
        record._points.append((t, 0.0))
        record._cap = 0.0
        if evicted:
            record.evicted_at = t
            record._live_until = t
        self.invalidate_fill()

    def run(self) -> SimResult:
        self.config.validate()
        for job, feat in zip(self.trace.jobs, self.features):
            self.push(job.arrival_time, _P_ARRIVAL, "arrival", (job, feat))
        while self.heap:
            t, prio, _, kind, payload = heapq.heappop(self.heap)
            self.advance(t)
            if kind == "arrival":
                self.on_arrival(*payload)
            elif kind == "end":
                if payload in self.ended:
                    continue
                self.ended.add(payload)
                record = self.records[payload]
                if record.scheduled_device == SSD and record.evicted_at is None:
                    self.release(record, t, evicted=False)
                on_end = getattr(self.policy, "on_end", None)
                if on_end is not None:
                    on_end(self.jobs_by_id[payload], record, t)
            elif kind == "evict":
                record = self.records[payload]
                if payload in self.ended or record.evicted_at is not None:
                    continue
                self.release(record, t, evicted=True)
            elif kind == "growth_end":
                record = self.records[payload]
                if payload not in self.growing:
                    continue  # spilled or released before reaching full size
                alloc = self.touch(record, t)
                # materialize the cap exactly
                self.alloc_total += record._cap - alloc
                record._points[-1] = (t, record._cap)
                self.rate_total -= record._rate
                record._rate = 0.0
                del self.growing[payload]
                self.invalidate_fill()
            elif kind == "ssd_full":
                if payload != self.fill_seq:
                    continue  # superseded by a later state change
                self.alloc_total = self.M
                self.freeze_growing(t)
            if self.alloc_total > self.M * (1 + 1e-9) + 1e-6:
                raise AssertionError(
                    f"SSD accounting exceeded quota: {self.alloc_total} > {self.M} at t={t}"
                )
        return self.finalize()

    def finalize(self) -> SimResult:
        baseline_tco = baseline_tcio = 0.0
        realized_tco = realized_tcio = 0.0
        for job in self.trace.jobs:
            record = self.records[job.job_id]
            hdd_tco = tco(job, HDD, self.rates)
            hdd_tcio = tcio_total(job, HDD, self.rates, job.end_time)
            phi = record.ssd_fraction
            record.realized_tco = phi * tco(job, SSD, self.rates) + (1.0 - phi) * hdd_tco
            record.realized_tcio = (1.0 - phi) * hdd_tcio
            baseline_tco += hdd_tco
            baseline_tcio += hdd_tcio
            realized_tco += record.realized_tco
            realized_tcio += record.realized_tcio
        tco_pct = 1.0 - realized_tco / baseline_tco if baseline_tco > 0 else 0.0
        tcio_pct = 1.0 - realized_tcio / baseline_tcio if baseline_tcio > 0 else 0.0
        act_series = None
        if self.config.record_act_series:
            act_series = list(getattr(self.policy, "act_series", []) or [])
        return SimResult(
            policy_name=getattr(self.policy, "name", type(self.policy).__name__),
            config=self.config,
            records=self.records,
            baseline_tco=baseline_tco,
            realized_tco=realized_tco,
            baseline_tcio=baseline_tcio,
            realized_tcio=realized_tcio,
            total_tco_savings_percent=tco_pct,
            total_tcio_savings_percent=tcio_pct,
            peak_ssd_bytes=self.peak_alloc,
            spillover_series=self.spillover_series,
            act_series=act_series,
        )


def run(trace: Trace, policy, config: SimConfig,
        features: Optional[Sequence[FeatureVector]] = None) -> SimResult:
    """Simulate one policy over a trace; deterministic for fixed inputs.

    features may be passed in to amortize feature extraction across runs
    of the same trace; they must align with trace.jobs.
    """
    return _Sim(trace, policy, config, features).run()


def write_job_csv(result: SimResult, path) -> None:
    """One row per job: placement, spill onset, realized costs."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["job_id", "scheduled_device", "t_s", "evicted_at",
                         "ssd_fraction", "realized_tco", "realized_tcio"])
        for job_id in sorted(result.records):
            r = result.records[job_id]
            writer.writerow([
                job_id,
                r.scheduled_device,
                repr(float(r.t_s)) if r.t_s is not None else "",
                repr(float(r.evicted_at)) if r.evicted_at is not None else "",
                repr(float(r.ssd_fraction)),
                repr(float(r.realized_tco)),
                repr(float(r.realized_tcio)),
            ])


def write_summary_csv(result: SimResult, path) -> None:
    """Key/value rows: run parameters and the savings totals."""
    rows = [
        ("policy", result.policy_name),
        ("footprint_model", result.config.footprint_model),
        ("ssd_quota", repr(float(result.config.ssd_quota))),
        ("baseline_tco", repr(float(result.baseline_tco))),
        ("realized_tco", repr(float(result.realized_tco))),
        ("tco_savings_pct", repr(100.0 * result.total_tco_savings_percent)),
        ("baseline_tcio", repr(float(result.baseline_tcio))),
        ("realized_tcio", repr(float(result.realized_tcio))),
        ("tcio_savings_pct", repr(100.0 * result.total_tcio_savings_percent)),
        ("peak_ssd_bytes", repr(float(result.peak_ssd_bytes))),
        ("n_ssd_scheduled", str(result.n_ssd_scheduled)),
        ("n_spilled", str(result.n_spilled)),
    ]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["key", "value"])
        writer.writerows(rows)
