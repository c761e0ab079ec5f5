"""Simulator core: allocation accounting, spill onset, growth, eviction,
and the realized-cost bookkeeping."""

import csv
import math

import pytest

from tierlab.costs import HDD, SSD, tcio_total
from tierlab.harness import job_with_io, make_job, micro_trace
from tierlab.policies import AlwaysPolicy, FirstFitPolicy
from tierlab.sim import (
    LINEAR_GROWTH,
    PlacementRecord,
    SimConfig,
    run,
    spillover_percentage,
    spillover_tcio,
    trace_spillover,
    write_job_csv,
    write_summary_csv,
)

GIB = 1 << 30


def io_job(job_id, arrival, end, size, ops=100):
    return make_job(job_id, arrival, end, size,
                    read_ops=ops, read_bytes=ops * 4096, write_ops=0, write_bytes=0)


def config(quota, rates, **kw):
    return SimConfig(ssd_quota=float(quota), rates=rates, **kw)


def test_zero_quota_firstfit_places_nothing(rates):
    trace = micro_trace([io_job(f"j{i}", 10.0 * i, 10.0 * i + 50.0, 100) for i in range(5)])
    result = run(trace, FirstFitPolicy(), config(0, rates))
    assert result.n_ssd_scheduled == 0
    assert result.realized_tco == result.baseline_tco
    assert result.total_tco_savings_percent == 0.0
    assert result.total_tcio_savings_percent == 0.0


def test_quota_covering_everything_eliminates_hdd_load(rates):
    jobs = [io_job(f"j{i}", 5.0 * i, 5.0 * i + 30.0, 100) for i in range(4)]
    trace = micro_trace(jobs)
    for quota in (sum(j.peak_bytes for j in jobs), math.inf):
        result = run(trace, AlwaysPolicy(SSD), config(quota, rates))
        assert result.n_ssd_scheduled == 4
        assert result.n_spilled == 0
        assert result.realized_tcio == 0.0
        assert result.total_tcio_savings_percent == 1.0


def test_second_of_two_sixty_byte_jobs_spills_twenty(rates):
    trace = micro_trace([io_job("a", 0.0, 100.0, 60), io_job("b", 10.0, 90.0, 60)])
    result = run(trace, AlwaysPolicy(SSD), config(100, rates))
    a, b = result.records["a"], result.records["b"]
    assert a.t_s is None and a.final_spilled_bytes == 0.0
    assert b.t_s == 10.0  # spills the moment it lands
    assert b.final_spilled_bytes == 20.0
    assert a.ssd_fraction == 1.0
    assert b.ssd_fraction == pytest.approx(40.0 / 60.0)
    assert result.peak_ssd_bytes == 100.0


def test_spillover_tcio_worked_example():
    # full spill from t_s=50 on a job with HDD load 2.0 over [0, 100]
    import dataclasses

    from tierlab.costs import CostRates

    flat = dataclasses.replace(CostRates(), hdd_iops_capacity=1.0)
    job = io_job("j", 0.0, 100.0, 1000, ops=2)  # tcio_total = 2.0 at end
    assert tcio_total(job, HDD, flat, 100.0) == 2.0
    record = PlacementRecord(job, SSD, config(1000, flat))
    record.t_s = 50.0
    record.final_spilled_bytes = float(job.peak_bytes)
    assert spillover_tcio(record, job, 100.0, flat) == 1.0
    # before the spill onset the contribution is zero
    assert spillover_tcio(record, job, 50.0, flat) == 0.0
    with pytest.raises(ValueError):
        spillover_tcio(record, job, -1.0, flat)


def test_trace_spillover_half_when_one_of_two_equal_jobs_spills(rates):
    trace = micro_trace([io_job("a", 0.0, 100.0, 50), io_job("b", 0.0, 100.0, 50)])
    result = run(trace, AlwaysPolicy(SSD), config(50, rates))
    spilled = [r for r in result.records.values() if r.t_s is not None]
    assert len(spilled) == 1
    assert trace_spillover(result.records, trace, rates) == 0.5


def test_hdd_jobs_do_not_enter_the_spillover_denominator(rates):
    trace = micro_trace([io_job("a", 0.0, 100.0, 50), io_job("b", 0.0, 100.0, 50)])
    result = run(trace, FirstFitPolicy(), config(50, rates))
    # a fits, b goes to HDD: nothing spilled, HDD job excluded entirely
    history = [(result.records[j.job_id], j) for j in trace.jobs]
    assert spillover_percentage(history, 100.0, rates) == 0.0
    assert trace_spillover(result.records, trace, rates) == 0.0


def test_linear_growth_fills_the_device_at_the_exact_instant(rates):
    trace = micro_trace([io_job("g", 0.0, 128.0, GIB)])
    cfg = config(GIB // 2, rates, footprint_model=LINEAR_GROWTH, growth_fraction=1.0)
    result = run(trace, AlwaysPolicy(SSD), cfg)
    g = result.records["g"]
    assert g.t_s == 64.0
    assert g.final_spilled_bytes == float(GIB // 2)
    # alloc ramps to M over [0, 64] then holds: 96 of 128 footprint units
    assert g.ssd_fraction == 0.75


def test_linear_growth_with_room_reaches_full_residency(rates):
    trace = micro_trace([io_job("g", 0.0, 100.0, 1000)])
    cfg = config(10_000, rates, footprint_model=LINEAR_GROWTH, growth_fraction=0.5)
    result = run(trace, AlwaysPolicy(SSD), cfg)
    g = result.records["g"]
    assert g.t_s is None
    assert g.final_spilled_bytes == 0.0
    assert g.ssd_fraction == 1.0
    assert result.peak_ssd_bytes == 1000.0


class EvictAfterTen(AlwaysPolicy):
    def __init__(self):
        super().__init__(SSD)

    def evict_at(self, job):
        return job.arrival_time + 10.0


def test_eviction_frees_space_for_later_arrivals(rates):
    trace = micro_trace([io_job("a", 0.0, 100.0, 60), io_job("b", 20.0, 80.0, 60)])
    result = run(trace, EvictAfterTen(), config(60, rates))
    a, b = result.records["a"], result.records["b"]
    assert a.evicted_at == 10.0
    assert a.ssd_fraction == pytest.approx(10.0 / 100.0)
    assert b.t_s is None  # the eviction made room
    assert b.evicted_at == 30.0


def test_spilled_jobs_never_reclaim_freed_space(rates):
    # a releases at t=100, but b (spilled at t=10) keeps its shortfall
    trace = micro_trace([
        io_job("a", 0.0, 100.0, 60),
        io_job("b", 10.0, 200.0, 60),
        io_job("c", 110.0, 150.0, 60),
    ])
    result = run(trace, AlwaysPolicy(SSD), config(100, rates))
    b, c = result.records["b"], result.records["c"]
    assert b.t_s == 10.0
    assert b.final_spilled_bytes == 20.0
    assert b.spilled_bytes_at(150.0) == 20.0
    assert c.t_s is None  # freed space serves new arrivals instead


def test_spilled_bytes_reporting_is_sticky_after_the_end(rates):
    trace = micro_trace([io_job("a", 0.0, 50.0, 60), io_job("b", 0.0, 50.0, 60)])
    result = run(trace, AlwaysPolicy(SSD), config(60, rates))
    spilled = next(r for r in result.records.values() if r.t_s is not None)
    assert spilled.final_spilled_bytes == 60.0
    assert spilled.spilled_bytes_at(50.0) == 60.0
    assert spilled.spilled_bytes_at(1000.0) == 60.0


def test_observation_reports_free_space(rates):
    seen = []

    class Recorder(AlwaysPolicy):
        def __init__(self):
            super().__init__(SSD)

        def on_arrival(self, job, features, obs):
            seen.append((obs.time, obs.free_bytes))
            return super().on_arrival(job, features, obs)

    trace = micro_trace([io_job("a", 0.0, 100.0, 30), io_job("b", 5.0, 100.0, 30)])
    run(trace, Recorder(), config(100, rates))
    assert seen == [(0.0, 100.0), (5.0, 70.0)]


def test_spillover_series_sampled_at_arrivals(rates):
    trace = micro_trace([io_job(f"j{i}", 10.0 * i, 10.0 * i + 25.0, 50) for i in range(6)])
    result = run(trace, AlwaysPolicy(SSD), config(75, rates))
    assert len(result.spillover_series) == 6
    assert all(0.0 <= v <= 1.0 for _, v in result.spillover_series)
    times = [t for t, _ in result.spillover_series]
    assert times == sorted(times)


def test_invalid_policy_device_is_rejected(rates):
    class Broken:
        name = "broken"

        def on_arrival(self, job, features, obs):
            return "FLOPPY"

    trace = micro_trace([io_job("a", 0.0, 10.0, 1)])
    with pytest.raises(ValueError):
        run(trace, Broken(), config(10, rates))


def test_feature_list_must_align(rates):
    trace = micro_trace([io_job("a", 0.0, 10.0, 1), io_job("b", 1.0, 10.0, 1)])
    with pytest.raises(ValueError):
        run(trace, FirstFitPolicy(), config(10, rates), features=[])


def test_config_validation(rates):
    with pytest.raises(ValueError):
        config(-1, rates).validate()
    with pytest.raises(ValueError):
        config(10, rates, footprint_model="exponential").validate()
    with pytest.raises(ValueError):
        config(10, rates, growth_fraction=0.0).validate()
    with pytest.raises(ValueError):
        config(10, rates, observation_window=0.0).validate()


def test_csv_outputs(tmp_path, rates):
    trace = micro_trace([io_job("a", 0.0, 100.0, 60), io_job("b", 10.0, 90.0, 60)])
    result = run(trace, AlwaysPolicy(SSD), config(100, rates))
    jobs_path = tmp_path / "jobs.csv"
    summary_path = tmp_path / "summary.csv"
    write_job_csv(result, jobs_path)
    write_summary_csv(result, summary_path)

    with open(jobs_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["job_id"] for r in rows] == ["a", "b"]
    assert rows[0]["scheduled_device"] == SSD
    assert rows[0]["t_s"] == "" and float(rows[1]["t_s"]) == 10.0

    with open(summary_path, newline="") as fh:
        summary = dict((r["key"], r["value"]) for r in csv.DictReader(fh))
    assert summary["policy"] == "always-ssd"
    assert summary["n_ssd_scheduled"] == "2"
    assert summary["n_spilled"] == "1"
    assert float(summary["peak_ssd_bytes"]) == 100.0
