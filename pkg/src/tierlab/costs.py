"""Dollar-cost (TCO) and HDD I/O load (TCIO) model for a single job.

TCIO is dimensionless: 1.0 is the I/O one standard HDD sustains per second.
A job placed on SSD has zero TCIO. Reads served by the DRAM cache never
reach the disks, and small writes are coalesced into fixed-size chunks
before they do, so the disk-reaching operation counts differ from the raw
profile.

TCO of a job on a device is the sum of four terms: byte storage, network,
server, and a device-specific term (HDD I/O provisioning vs. SSD write
wearout). The SSD server term is throughput-proportional with no duration
factor; that asymmetry is intentional and mirrored by the tests.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from tierlab.trace import Job

SSD = "SSD"
HDD = "HDD"

MIB = 1 << 20


@dataclass(frozen=True)
class CostRates:
    """All conversion-rate constants of the cost equations.

    The shipped defaults are invented, order-of-magnitude plausible numbers
    (real rates are proprietary); experiments should treat them as a config
    input, not as ground truth. Units are noted per field.
    """

    byte_cost_hdd: float = 4.0e-18  # $ per byte-second stored
    byte_cost_ssd: float = 2.0e-17  # $ per byte-second stored (5x HDD)
    network_cost_rate: float = 1.0e-12  # $ per (byte/s of throughput)-second
    server_cost_rate_hdd: float = 1.0e-6  # $ per TCIO-second
    server_cost_rate_ssd: float = 3.0e-11  # $ per byte/s of SSD throughput
    device_cost_rate_hdd: float = 2.0e-6  # $ per TCIO-second
    wearout_cost_rate_ssd: float = 2.0e-13  # $ per byte written to SSD
    hdd_iops_capacity: float = 150.0  # disk ops/second that define TCIO = 1.0
    coalesce_chunk_bytes: int = MIB  # write coalescing chunk size
    dram_cache_enabled: bool = True

    def validate(self) -> None:
        for name, value in asdict(self).items():
            if name == "dram_cache_enabled":
                continue
            if value < 0:
                raise ValueError(f"rate {name} must be >= 0, got {value}")
        if self.coalesce_chunk_bytes <= 0:
            raise ValueError("coalesce_chunk_bytes must be > 0")
        if self.hdd_iops_capacity <= 0:
            raise ValueError("hdd_iops_capacity must be > 0")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_file(cls, path) -> "CostRates":
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown rate keys: {sorted(unknown)}")
        rates = cls(**data)
        rates.validate()
        return rates


@dataclass(frozen=True)
class EffectiveIoProfile:
    """Disk-reaching I/O of a job after cache and coalescing effects.

    tcio_hdd_rate is the constant TCIO the job exerts while running if
    placed on HDD; io_throughput is the raw byte throughput (network-level,
    unaffected by caching); total_written_bytes feeds SSD wearout.
    """

    tcio_hdd_rate: float
    io_throughput: float
    total_written_bytes: float
    duration: float


def effective_io(job: "Job", rates: CostRates) -> EffectiveIoProfile:
    """Fold cache hits and write coalescing into a per-job I/O profile."""
    duration = job.end_time - job.arrival_time
    if duration <= 0:
        raise ValueError(f"job {job.job_id}: zero or negative duration")
    io = job.raw_io
    if rates.dram_cache_enabled:
        disk_read_ops = io.read_ops * (1.0 - io.cache_hit_fraction)
    else:
        disk_read_ops = float(io.read_ops)
    disk_write_ops = math.ceil(io.write_bytes / rates.coalesce_chunk_bytes)
    tcio_hdd_rate = (disk_read_ops + disk_write_ops) / (duration * rates.hdd_iops_capacity)
    io_throughput = (io.read_bytes + io.write_bytes) / duration
    return EffectiveIoProfile(
        tcio_hdd_rate=tcio_hdd_rate,
        io_throughput=io_throughput,
        total_written_bytes=float(io.write_bytes),
        duration=duration,
    )


def tcio_total(job: "Job", device: str, rates: CostRates, until_t: float) -> float:
    """TCIO-seconds accumulated by the job on `device` up to `until_t`.

    Zero on SSD by definition; on HDD the constant rate accrues from
    arrival until min(until_t, end).
    """
    if until_t < job.arrival_time:
        raise ValueError(f"until_t {until_t} precedes arrival of {job.job_id}")
    if device == SSD:
        return 0.0
    rate = effective_io(job, rates).tcio_hdd_rate
    return rate * (min(until_t, job.end_time) - job.arrival_time)


def tco(job: "Job", device: str, rates: CostRates) -> float:
    """Dollar cost of running the job entirely on `device`."""
    eff = effective_io(job, rates)
    d = eff.duration
    if device == HDD:
        cost_byte = rates.byte_cost_hdd * job.peak_bytes * d
        cost_network = rates.network_cost_rate * eff.io_throughput * d
        cost_server = rates.server_cost_rate_hdd * eff.tcio_hdd_rate * d
        cost_specific = rates.device_cost_rate_hdd * eff.tcio_hdd_rate * d
    elif device == SSD:
        cost_byte = rates.byte_cost_ssd * job.peak_bytes * d
        cost_network = rates.network_cost_rate * eff.io_throughput * d
        cost_server = rates.server_cost_rate_ssd * eff.io_throughput
        cost_specific = rates.wearout_cost_rate_ssd * eff.total_written_bytes
    else:
        raise ValueError(f"unknown device {device!r}")
    return cost_byte + cost_network + cost_server + cost_specific


def tco_savings(job: "Job", rates: CostRates) -> float:
    """Dollars saved by placing the job on SSD instead of HDD (may be < 0)."""
    return tco(job, HDD, rates) - tco(job, SSD, rates)
