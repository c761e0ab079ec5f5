"""The verification helpers themselves: exhaustive oracle, instance
generator, and the scripted-scenario runner's mismatch reporting."""

import numpy as np
import pytest

from tierlab.costs import SSD, effective_io
from tierlab.harness import (
    BRUTE_FORCE_LIMIT,
    PolicyScript,
    brute_force_oracle,
    job_with_io,
    make_job,
    micro_trace,
    random_instance,
    scripted_policy_trace,
)
from tierlab.oracle import OracleInstance, OracleJob, STATUS_OPTIMAL
from tierlab.trace import validate_trace


def test_brute_force_on_a_worked_pair():
    inst = OracleInstance(
        jobs=(
            OracleJob("a", 0.0, 100.0, 10, 5.0),
            OracleJob("b", 50.0, 150.0, 10, 3.0),
        ),
        ssd_quota=10.0,
        objective="tco",
    )
    sol = brute_force_oracle(inst)
    assert sol.x == (True, False)
    assert sol.objective_value == 5.0
    assert sol.status == STATUS_OPTIMAL
    assert sol.nodes_explored == 4  # all subsets of two jobs


def test_brute_force_on_the_empty_instance():
    inst = OracleInstance(jobs=(), ssd_quota=10.0, objective="tco")
    sol = brute_force_oracle(inst)
    assert sol.x == ()
    assert sol.objective_value == 0.0


def test_brute_force_refuses_large_instances():
    jobs = tuple(
        OracleJob(f"j{i}", 0.0, 1.0, 1, 1.0) for i in range(BRUTE_FORCE_LIMIT + 1)
    )
    inst = OracleInstance(jobs=jobs, ssd_quota=1.0, objective="tco")
    with pytest.raises(ValueError):
        brute_force_oracle(inst)


def test_random_instances_are_well_formed():
    rng = np.random.default_rng(3)
    saw_negative = False
    for _ in range(20):
        inst = random_instance(rng, 8)
        inst.validate()
        assert len(inst.jobs) == 8
        assert inst.ssd_quota > 0
        assert [j.job_id for j in inst.jobs] == [f"j{i:03d}" for i in range(8)]
        arrivals = [j.arrival for j in inst.jobs]
        assert arrivals == sorted(arrivals)
        saw_negative = saw_negative or any(j.gain < 0 for j in inst.jobs)
    assert saw_negative


def test_make_job_produces_a_valid_job():
    job = make_job("j", 5.0, 65.0, 1024, read_ops=10, read_bytes=40960,
                   write_ops=4, write_bytes=4096, tokens=("alpha", "beta"))
    assert validate_trace(micro_trace([job])) == []
    assert job.raw_io.mean_write_op_bytes == 1024.0
    assert job.write_phase_fraction == 0.5
    assert job.metadata_tokens == ("alpha", "beta")


def test_job_with_io_hits_the_requested_disk_rate(rates):
    job = job_with_io("j", 0.0, 100.0, 50, disk_ops_per_second=1.0)
    assert effective_io(job, rates).tcio_hdd_rate == 1.0
    slower = job_with_io("j", 0.0, 400.0, 50, disk_ops_per_second=0.25)
    assert effective_io(slower, rates).tcio_hdd_rate == 0.25


def test_micro_trace_sorts_and_stamps():
    trace = micro_trace([make_job("b", 10.0, 20.0, 1), make_job("a", 0.0, 5.0, 1)],
                        epoch=123.0)
    assert [j.job_id for j in trace.jobs] == ["a", "b"]
    assert trace.epoch == 123.0


def two_job_script(**overrides):
    jobs = [make_job("a", 0.0, 100.0, 10), make_job("b", 10.0, 100.0, 10)]
    base = dict(
        trace=micro_trace(jobs),
        categories={"a": 1, "b": 1},
        n_categories=5,
        ssd_quota=100.0,
        expected_devices={"a": SSD, "b": SSD},
    )
    base.update(overrides)
    return PolicyScript(**base)


def test_scripted_runner_passes_a_consistent_script():
    result = scripted_policy_trace(two_job_script())
    assert result.n_ssd_scheduled == 2


def test_scripted_runner_reports_device_mismatches():
    script = two_job_script(expected_devices={"a": SSD, "b": "HDD"})
    with pytest.raises(AssertionError, match="job b"):
        scripted_policy_trace(script)


def test_scripted_runner_reports_act_mismatches():
    script = two_job_script(expected_act=(3, 3))
    with pytest.raises(AssertionError, match="act trajectory"):
        scripted_policy_trace(script)
