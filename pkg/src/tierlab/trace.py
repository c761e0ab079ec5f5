"""Canonical job/trace data model and the newline-delimited trace format.

A trace file is UTF-8 JSON-lines: one metadata header line followed by one
job object per line. Serialization is canonical (sorted keys, fixed
separators) so save -> load -> save is byte-identical, and ingestion
re-sorts jobs so the result is independent of input line order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional

TRACE_FORMAT = "tierlab-trace"
TRACE_VERSION = 1

_JOB_FIELDS = {
    "job_id",
    "pipeline_id",
    "user_id",
    "step_name",
    "arrival_time",
    "end_time",
    "peak_bytes",
    "write_phase_fraction",
    "raw_io",
    "resources",
    "metadata_tokens",
}
_RAW_IO_FIELDS = {"read_ops", "write_ops", "read_bytes", "write_bytes", "cache_hit_fraction", "mean_write_op_bytes"}
_RESOURCE_FIELDS = {
    "num_workers",
    "num_worker_threads",
    "num_buckets",
    "initial_num_buckets",
    "num_shards",
    "records_written",
    "weekday",
    "hour_of_day",
}


class TraceError(ValueError):
    """Raised for malformed trace files; carries the offending line number."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


@dataclass(frozen=True)
class RawIoProfile:
    """Raw (pre-cache, pre-coalescing) I/O counters of one job."""

    read_ops: int
    write_ops: int
    read_bytes: int
    write_bytes: int
    cache_hit_fraction: float
    mean_write_op_bytes: float


@dataclass(frozen=True)
class ResourceFeatures:
    """Scheduler-assigned resources plus the start-time calendar fields."""

    num_workers: int
    num_worker_threads: int
    num_buckets: int
    initial_num_buckets: int
    num_shards: int
    records_written: int
    weekday: int
    hour_of_day: int


@dataclass(frozen=True)
class Job:
    """One shuffle job: identity, timing, footprint, raw I/O and features."""

    job_id: str
    pipeline_id: str
    user_id: str
    step_name: str
    arrival_time: float
    end_time: float
    peak_bytes: int
    write_phase_fraction: float
    raw_io: RawIoProfile
    resources: ResourceFeatures
    metadata_tokens: tuple[str, ...]

    @property
    def lifetime(self) -> float:
        return self.end_time - self.arrival_time


@dataclass(frozen=True)
class Trace:
    """Jobs sorted by (arrival_time, job_id), plus the epoch origin."""

    jobs: tuple[Job, ...]
    epoch: float = 0.0
    generator_seed: Optional[int] = None


def _sort_jobs(jobs: Iterable[Job]) -> tuple[Job, ...]:
    return tuple(sorted(jobs, key=lambda j: (j.arrival_time, j.job_id)))


def make_trace(jobs: Iterable[Job], epoch: float = 0.0, generator_seed: Optional[int] = None) -> Trace:
    """Build a Trace with the canonical sort order applied."""
    return Trace(jobs=_sort_jobs(jobs), epoch=epoch, generator_seed=generator_seed)


def _job_to_dict(job: Job) -> dict:
    return {
        "job_id": job.job_id,
        "pipeline_id": job.pipeline_id,
        "user_id": job.user_id,
        "step_name": job.step_name,
        "arrival_time": job.arrival_time,
        "end_time": job.end_time,
        "peak_bytes": job.peak_bytes,
        "write_phase_fraction": job.write_phase_fraction,
        "raw_io": {
            "read_ops": job.raw_io.read_ops,
            "write_ops": job.raw_io.write_ops,
            "read_bytes": job.raw_io.read_bytes,
            "write_bytes": job.raw_io.write_bytes,
            "cache_hit_fraction": job.raw_io.cache_hit_fraction,
            "mean_write_op_bytes": job.raw_io.mean_write_op_bytes,
        },
        "resources": {
            "num_workers": job.resources.num_workers,
            "num_worker_threads": job.resources.num_worker_threads,
            "num_buckets": job.resources.num_buckets,
            "initial_num_buckets": job.resources.initial_num_buckets,
            "num_shards": job.resources.num_shards,
            "records_written": job.resources.records_written,
            "weekday": job.resources.weekday,
            "hour_of_day": job.resources.hour_of_day,
        },
        "metadata_tokens": list(job.metadata_tokens),
    }


def _check_fields(obj: dict, allowed: set, what: str, line: int, strict: bool, warnings: list) -> None:
    unknown = set(obj) - allowed
    if unknown:
        msg = f"unknown {what} fields: {sorted(unknown)}"
        if strict:
            raise TraceError(msg, line)
        warnings.append(f"line {line}: {msg}")
    missing = allowed - set(obj)
    if missing:
        raise TraceError(f"missing {what} fields: {sorted(missing)}", line)


def _job_from_dict(obj: dict, line: int, strict: bool, warnings: list) -> Job:
    _check_fields(obj, _JOB_FIELDS, "job", line, strict, warnings)
    _check_fields(obj["raw_io"], _RAW_IO_FIELDS, "raw_io", line, strict, warnings)
    _check_fields(obj["resources"], _RESOURCE_FIELDS, "resources", line, strict, warnings)
    io = obj["raw_io"]
    res = obj["resources"]
    job = Job(
        job_id=str(obj["job_id"]),
        pipeline_id=str(obj["pipeline_id"]),
        user_id=str(obj["user_id"]),
        step_name=str(obj["step_name"]),
        arrival_time=float(obj["arrival_time"]),
        end_time=float(obj["end_time"]),
        peak_bytes=int(obj["peak_bytes"]),
        write_phase_fraction=float(obj["write_phase_fraction"]),
        raw_io=RawIoProfile(
            read_ops=int(io["read_ops"]),
            write_ops=int(io["write_ops"]),
            read_bytes=int(io["read_bytes"]),
            write_bytes=int(io["write_bytes"]),
            cache_hit_fraction=float(io["cache_hit_fraction"]),
            mean_write_op_bytes=float(io["mean_write_op_bytes"]),
        ),
        resources=ResourceFeatures(
            num_workers=int(res["num_workers"]),
            num_worker_threads=int(res["num_worker_threads"]),
            num_buckets=int(res["num_buckets"]),
            initial_num_buckets=int(res["initial_num_buckets"]),
            num_shards=int(res["num_shards"]),
            records_written=int(res["records_written"]),
            weekday=int(res["weekday"]),
            hour_of_day=int(res["hour_of_day"]),
        ),
        metadata_tokens=tuple(str(t) for t in obj["metadata_tokens"]),
    )
    if job.end_time <= job.arrival_time:
        raise TraceError(f"job {job.job_id}: end_time <= arrival_time", line)
    if job.peak_bytes <= 0:
        raise TraceError(f"job {job.job_id}: peak_bytes must be > 0", line)
    if not (0.0 < job.write_phase_fraction <= 1.0):
        raise TraceError(f"job {job.job_id}: write_phase_fraction out of (0, 1]", line)
    return job


def load_trace(path, strict: bool = True, warnings: Optional[list] = None) -> Trace:
    """Parse a trace file; re-sorts jobs and enforces the Job invariants."""
    warn = warnings if warnings is not None else []
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise TraceError("empty file: missing metadata header line")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise TraceError(f"bad metadata header: {exc}", 1) from exc
    if header.get("format") != TRACE_FORMAT:
        raise TraceError(f"not a {TRACE_FORMAT} file", 1)
    jobs = []
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise TraceError(f"bad job record: {exc}", lineno) from exc
        job = _job_from_dict(obj, lineno, strict, warn)
        if job.job_id in seen:
            raise TraceError(f"duplicate job_id {job.job_id!r} (first seen line {seen[job.job_id]})", lineno)
        seen[job.job_id] = lineno
        jobs.append(job)
    return Trace(
        jobs=_sort_jobs(jobs),
        epoch=float(header.get("epoch", 0.0)),
        generator_seed=header.get("generator_seed"),
    )


def save_trace(trace: Trace, path) -> None:
    """Write a trace in canonical form (stable bytes for equal traces)."""
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "format": TRACE_FORMAT,
            "version": TRACE_VERSION,
            "epoch": trace.epoch,
            "generator_seed": trace.generator_seed,
        }
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":"), ensure_ascii=False))
        fh.write("\n")
        for job in trace.jobs:
            fh.write(json.dumps(_job_to_dict(job), sort_keys=True, separators=(",", ":"), ensure_ascii=False))
            fh.write("\n")


def validate_trace(trace: Trace) -> list[str]:
    """Return a list of invariant violations; empty iff the trace is valid."""
    violations = []
    seen: dict[str, str] = {}
    prev_key = None
    for job in trace.jobs:
        if job.end_time <= job.arrival_time:
            violations.append(f"job {job.job_id}: end_time <= arrival_time")
        if job.peak_bytes <= 0:
            violations.append(f"job {job.job_id}: peak_bytes <= 0")
        if not (0.0 < job.write_phase_fraction <= 1.0):
            violations.append(f"job {job.job_id}: write_phase_fraction out of (0, 1]")
        io = job.raw_io
        if min(io.read_ops, io.write_ops, io.read_bytes, io.write_bytes) < 0:
            violations.append(f"job {job.job_id}: negative raw_io counter")
        if not (0.0 <= io.cache_hit_fraction <= 1.0):
            violations.append(f"job {job.job_id}: cache_hit_fraction out of [0, 1]")
        if io.write_ops > 0 and abs(io.write_bytes - io.write_ops * io.mean_write_op_bytes) > max(1.0, io.mean_write_op_bytes):
            violations.append(f"job {job.job_id}: write_bytes inconsistent with write_ops * mean_write_op_bytes")
        res = job.resources
        if min(res.num_workers, res.num_worker_threads, res.num_buckets, res.initial_num_buckets, res.num_shards, res.records_written) < 0:
            violations.append(f"job {job.job_id}: negative resource count")
        if not (0 <= res.weekday <= 6):
            violations.append(f"job {job.job_id}: weekday out of 0-6")
        if not (0 <= res.hour_of_day <= 23):
            violations.append(f"job {job.job_id}: hour_of_day out of 0-23")
        if job.job_id in seen:
            violations.append(f"duplicate job_id {job.job_id!r}")
        seen[job.job_id] = job.job_id
        key = (job.arrival_time, job.job_id)
        if prev_key is not None and key < prev_key:
            violations.append(f"job {job.job_id}: sort order violated")
        prev_key = key
    return violations
