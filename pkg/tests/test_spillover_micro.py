"""Spillover percentage on three tiny hand-checkable traces.

Expected values live in fixtures/spillover_expected.json, produced by
fixtures/make_spillover_expected.py from the definition alone (no simulator
involvement).  All three come out exact in binary floating point, so the
comparisons below are equalities.
"""

import json
import pathlib

from tierlab.costs import SSD
from tierlab.harness import make_job, micro_trace
from tierlab.policies import AlwaysPolicy
from tierlab.sim import LINEAR_GROWTH, SimConfig, run, trace_spillover

GIB = 1 << 30

EXPECTED = json.loads(
    (pathlib.Path(__file__).parent / "fixtures" / "spillover_expected.json").read_text()
)


def spill_job(job_id, arrival, end, peak):
    return make_job(job_id, arrival, end, peak,
                    read_ops=10, read_bytes=10 * 4096, write_ops=0, write_bytes=0)


def measure(jobs, quota, rates, **config_kw):
    trace = micro_trace(jobs)
    cfg = SimConfig(ssd_quota=float(quota), rates=rates, **config_kw)
    result = run(trace, AlwaysPolicy(SSD), cfg)
    return trace_spillover(result.records, trace, rates), result


def test_zero_quota_trace_spills_completely(rates):
    jobs = [spill_job(f"j{i}", 100.0 * i, 100.0 * i + 50.0, GIB) for i in range(3)]
    value, result = measure(jobs, 0, rates)
    assert value == EXPECTED["full_spill"] == 1.0
    assert result.n_spilled == 3


def test_half_capacity_constant_job_spills_half(rates):
    value, result = measure([spill_job("j", 0.0, 100.0, GIB)], GIB // 2, rates)
    assert value == EXPECTED["half_spill"] == 0.5
    assert result.records["j"].t_s == 0.0


def test_growing_job_spills_a_quarter(rates):
    value, result = measure(
        [spill_job("j", 0.0, 128.0, GIB)], GIB // 2, rates,
        footprint_model=LINEAR_GROWTH, growth_fraction=1.0,
    )
    assert value == EXPECTED["growth_spill"] == 0.25
    assert result.records["j"].t_s == 64.0


def test_percentage_stays_in_unit_interval(rates):
    for quota in (0, GIB // 4, GIB // 2, GIB, 4 * GIB):
        jobs = [spill_job(f"j{i}", 30.0 * i, 30.0 * i + 200.0, GIB // (i + 1))
                for i in range(4)]
        value, _ = measure(jobs, quota, rates)
        assert 0.0 <= value <= 1.0
