"""Verification helpers: exhaustive oracle, random instances, micro-traces.

The exhaustive oracle is the independent ground truth for the solver:
it enumerates every subset, applies the same arrival-instant feasibility
rule, and totals objectives with the same canonical summation, so an
exact solver must match it to the last bit.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from tierlab.costs import CostRates
from tierlab.models import PrecomputedCategoryModel
from tierlab.oracle import (
    STATUS_OPTIMAL,
    OracleInstance,
    OracleJob,
    OracleSolution,
    canonical_value,
)
from tierlab.policies import AdaptiveCategoryPolicy
from tierlab.sim import SimConfig, SimResult, run
from tierlab.trace import Job, RawIoProfile, ResourceFeatures, Trace, make_trace

BRUTE_FORCE_LIMIT = 20


def brute_force_oracle(inst: OracleInstance) -> OracleSolution:
    """Exact optimum by enumerating all 2^n subsets (n <= 20)."""
    inst.validate()
    n = len(inst.jobs)
    if n > BRUTE_FORCE_LIMIT:
        raise ValueError(f"instance too large for enumeration: {n} > {BRUTE_FORCE_LIMIT}")
    gains = [j.gain for j in inst.jobs]
    if n == 0:
        return OracleSolution((), 0.0, STATUS_OPTIMAL, 0.0, 1)

    events = sorted({j.arrival for j in inst.jobs})
    # active[i, e]: job i's size if it is active at event e, else 0
    active = np.zeros((n, len(events)))
    for i, j in enumerate(inst.jobs):
        for e, t in enumerate(events):
            if j.arrival <= t < j.end:
                active[i, e] = j.size

    gains_arr = np.asarray(gains)
    best_mask, best_val = 0, 0.0
    chunk = 1 << 16
    for start in range(0, 1 << n, chunk):
        masks = np.arange(start, min(start + chunk, 1 << n), dtype=np.uint64)
        bits = ((masks[:, None] >> np.arange(n, dtype=np.uint64)) & 1).astype(np.float64)
        feasible = (bits @ active <= inst.ssd_quota).all(axis=1)
        if not feasible.any():
            continue
        approx = bits @ gains_arr
        approx[~feasible] = -np.inf
        # Recompute every near-max subset canonically; numpy's summation
        # order differs from the canonical one, so ties must be re-read.
        cutoff = approx.max() - 1e-9 * max(1.0, abs(approx.max()))
        for m in masks[approx >= cutoff]:
            sel = [i for i in range(n) if (int(m) >> i) & 1]
            value = canonical_value(gains, sel)
            if value > best_val:
                best_val, best_mask = value, int(m)
    x = tuple(bool((best_mask >> i) & 1) for i in range(n))
    return OracleSolution(x, best_val, STATUS_OPTIMAL, 0.0, 1 << n)


def random_instance(rng: np.random.Generator, n_jobs: int,
                    quota_scale: float = 1.5,
                    negative_fraction: float = 0.3) -> OracleInstance:
    """Small overlapping instance with mixed-sign gains for cross-checks."""
    jobs = []
    t = 0.0
    for i in range(n_jobs):
        t += float(rng.exponential(10.0))
        life = float(rng.exponential(40.0)) + 1.0
        size = int(rng.integers(1, 100))
        gain = float(rng.normal(5.0, 4.0))
        if rng.random() < negative_fraction:
            gain = -abs(gain)
        jobs.append(OracleJob(f"j{i:03d}", t, t + life, size, gain))
    mean_size = sum(j.size for j in jobs) / max(1, len(jobs))
    quota = float(rng.uniform(0.5, quota_scale) * mean_size * max(1.0, n_jobs / 4))
    return OracleInstance(jobs=tuple(jobs), ssd_quota=quota, objective="tco")


def make_job(job_id: str, arrival: float, end: float, size: int,
             pipeline_id: str = "micro.pipe00", user_id: str = "user-micro",
             step_name: str = "shuffle-s0",
             read_ops: int = 0, write_ops: int = 1,
             read_bytes: int = 0, write_bytes: int = 1,
             cache_hit_fraction: float = 0.0,
             tokens: Sequence[str] = (),
             num_workers: int = 1) -> Job:
    """Hand-authored job with neutral defaults for scripted scenarios."""
    return Job(
        job_id=job_id,
        pipeline_id=pipeline_id,
        user_id=user_id,
        step_name=step_name,
        arrival_time=float(arrival),
        end_time=float(end),
        peak_bytes=size,
        write_phase_fraction=0.5,
        raw_io=RawIoProfile(
            read_ops=read_ops,
            write_ops=write_ops,
            read_bytes=read_bytes,
            write_bytes=write_bytes,
            cache_hit_fraction=cache_hit_fraction,
            mean_write_op_bytes=write_bytes / max(1, write_ops),
        ),
        resources=ResourceFeatures(
            num_workers=num_workers,
            num_worker_threads=1,
            num_buckets=1,
            initial_num_buckets=1,
            num_shards=1,
            records_written=0,
            weekday=0,
            hour_of_day=0,
        ),
        metadata_tokens=tuple(tokens),
    )


def micro_trace(jobs: Sequence[Job], epoch: float = 0.0) -> Trace:
    return make_trace(jobs, epoch=epoch)


def job_with_io(job_id: str, arrival: float, end: float, size: int,
                disk_ops_per_second: float, hdd_iops_capacity: float = 150.0,
                **kwargs) -> Job:
    """Job whose uncached read ops produce a chosen HDD load rate.

    tcio rate = ops/(duration * capacity); writes are left at a single
    1-byte op so their coalesced chunk adds one op over the lifetime.
    """
    duration = end - arrival
    total_ops = disk_ops_per_second * duration * hdd_iops_capacity
    read_ops = max(0, int(round(total_ops)) - 1)  # the write chunk is the +1
    return make_job(job_id, arrival, end, size, read_ops=read_ops,
                    read_bytes=read_ops * 4096, **kwargs)


@dataclass(frozen=True)
class PolicyScript:
    """A scripted adaptive-policy scenario with its expected outcomes.

    categories plays the role of the model: the policy sees exactly
    these outputs. Expectations may cover per-job devices and the ACT
    value at each decision point; leave either empty to skip it.
    """

    trace: Trace
    categories: Mapping[str, int]
    n_categories: int
    ssd_quota: float
    tolerance: tuple[float, float] = (0.01, 0.15)
    t_w: float = 900.0
    t_l: float = 900.0
    rates: CostRates = dataclasses.field(default_factory=CostRates)
    expected_devices: Mapping[str, str] = dataclasses.field(default_factory=dict)
    expected_act: Sequence[int] = ()


def scripted_policy_trace(script: PolicyScript) -> SimResult:
    """Run the scripted scenario; raise with a diff when it diverges."""
    model = PrecomputedCategoryModel(dict(script.categories), script.n_categories,
                                     name="scripted")
    policy = AdaptiveCategoryPolicy(model, script.tolerance, script.t_w, script.t_l)
    config = SimConfig(ssd_quota=script.ssd_quota, rates=script.rates,
                       record_act_series=True)
    result = run(script.trace, policy, config)

    mismatches = []
    for job_id, want in script.expected_devices.items():
        got = result.records[job_id].scheduled_device
        if got != want:
            mismatches.append(f"job {job_id}: placed {got}, expected {want}")
    if script.expected_act:
        got_act = [act for _, act, _ in (result.act_series or [])]
        if got_act != list(script.expected_act):
            mismatches.append(
                f"act trajectory {got_act}, expected {list(script.expected_act)}"
            )
    if mismatches:
        raise AssertionError("scripted run diverged:\n  " + "\n  ".join(mismatches))
    return result
