"""Synthetic shuffle-job trace generator.

Each archetype is an independent job stream: Poisson arrivals with a
diurnal intensity lambda(t) = rate * (1 + amplitude * sin(2*pi*t/86400)),
lognormal sizes and lifetimes, and a target I/O density (disk ops per byte
of footprint). Resource features and metadata tokens are drawn correlated
with the archetype so that density is statistically recoverable from
features; with feature_noise = 0 a constant per-archetype marker token
makes it exactly recoverable.

Every archetype uses its own PRNG substream (numpy PCG64 seeded via
SeedSequence(seed, spawn_key=(archetype_index,))), so adding an archetype
never perturbs the jobs of the others.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone

import numpy as np

from tierlab.trace import Job, RawIoProfile, ResourceFeatures, Trace, make_trace

DAY_SECONDS = 86400.0
MIB = 1 << 20

# 2026-01-05 00:00:00 UTC, a Monday; keeps weekday features aligned.
DEFAULT_EPOCH = 1767571200.0


@dataclass(frozen=True)
class ArchetypeConfig:
    """Distributional knobs for one job stream."""

    name: str
    arrival_rate: float  # jobs per hour
    diurnal_amplitude: float
    size_mu: float  # lognormal of peak_bytes
    size_sigma: float
    lifetime_mu: float  # lognormal of lifetime seconds
    lifetime_sigma: float
    io_density_level: float  # target mean disk ops per byte of footprint
    write_fraction: float
    cache_hit_fraction: float
    feature_noise: float
    pipeline_count: int

    def validate(self) -> None:
        if self.arrival_rate <= 0:
            raise ValueError(f"{self.name}: arrival_rate must be > 0")
        if not (0.0 <= self.diurnal_amplitude <= 1.0):
            raise ValueError(f"{self.name}: diurnal_amplitude out of [0, 1]")
        if self.io_density_level <= 0:
            raise ValueError(f"{self.name}: io_density_level must be > 0")
        if not (0.0 <= self.write_fraction <= 1.0):
            raise ValueError(f"{self.name}: write_fraction out of [0, 1]")
        if not (0.0 <= self.cache_hit_fraction <= 1.0):
            raise ValueError(f"{self.name}: cache_hit_fraction out of [0, 1]")
        if self.feature_noise < 0:
            raise ValueError(f"{self.name}: feature_noise must be >= 0")
        if self.pipeline_count < 1:
            raise ValueError(f"{self.name}: pipeline_count must be >= 1")


@dataclass(frozen=True)
class GeneratorConfig:
    archetypes: tuple[ArchetypeConfig, ...]
    duration: float  # seconds
    seed: int = 0
    epoch: float = DEFAULT_EPOCH

    def validate(self) -> None:
        if not self.archetypes:
            raise ValueError("at least one archetype required")
        if self.duration <= 0:
            raise ValueError("duration must be > 0")
        for arch in self.archetypes:
            arch.validate()

    @classmethod
    def from_file(cls, path) -> "GeneratorConfig":
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        archetypes = tuple(ArchetypeConfig(**a) for a in data["archetypes"])
        cfg = cls(
            archetypes=archetypes,
            duration=float(data["duration"]),
            seed=int(data.get("seed", 0)),
            epoch=float(data.get("epoch", DEFAULT_EPOCH)),
        )
        cfg.validate()
        return cfg

    def to_json(self) -> str:
        data = {
            "archetypes": [asdict(a) for a in self.archetypes],
            "duration": self.duration,
            "seed": self.seed,
            "epoch": self.epoch,
        }
        return json.dumps(data, indent=2, sort_keys=True)


def _name_digest(name: str) -> bytes:
    return hashlib.sha256(name.encode("utf-8")).digest()


def _calendar_fields(epoch: float, t: float) -> tuple[int, int]:
    dt = datetime.fromtimestamp(epoch + t, tz=timezone.utc)
    return dt.weekday(), dt.hour


def _poisson_arrivals(rng: np.random.Generator, rate_per_s: float, amplitude: float, duration: float) -> list[float]:
    """Inhomogeneous Poisson arrivals by thinning against the peak rate."""
    lam_max = rate_per_s * (1.0 + amplitude)
    arrivals = []
    t = 0.0
    while True:
        t += rng.exponential(1.0 / lam_max)
        if t >= duration:
            return arrivals
        lam_t = rate_per_s * (1.0 + amplitude * math.sin(2.0 * math.pi * t / DAY_SECONDS))
        if rng.random() * lam_max <= lam_t:
            arrivals.append(t)


def _gen_archetype_jobs(arch: ArchetypeConfig, arch_idx: int, config: GeneratorConfig, all_markers: list[str]) -> list[Job]:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.seed, spawn_key=(arch_idx,))))
    digest = _name_digest(arch.name)
    workers_base = 4 + digest[0] % 60
    threads_base = 1 + digest[1] % 16
    buckets_mult = 2 + digest[2] % 6
    shards_mult = 1 + digest[3] % 4
    record_bytes = 120 + digest[4] * 2
    size_median = math.exp(arch.size_mu)
    marker = f"arch-{arch.name}"
    noise_sigma = 0.2 + arch.feature_noise
    corrupt_p = min(1.0, arch.feature_noise)

    jobs = []
    for seq, t in enumerate(_poisson_arrivals(rng, arch.arrival_rate / 3600.0, arch.diurnal_amplitude, config.duration)):
        lifetime = rng.lognormal(arch.lifetime_mu, arch.lifetime_sigma)
        lifetime = max(lifetime, 1.0)
        size = max(1, int(round(rng.lognormal(arch.size_mu, arch.size_sigma))))

        # Disk-reaching ops aim at io_density_level * size; write volume is
        # a multiple of the footprint scaled by write_fraction.
        density_jitter = rng.lognormal(0.0, 0.3)
        write_volume = (0.25 + 1.75 * arch.write_fraction) * rng.lognormal(0.0, 0.2)
        write_bytes = max(1, int(round(write_volume * size)))
        write_op_draw = rng.lognormal(math.log(256 * 1024), 0.5)
        write_op_size = min(max(write_op_draw, 4096.0), float(MIB))
        write_ops = max(1, int(round(write_bytes / write_op_size)))

        total_ops_target = arch.io_density_level * size * density_jitter
        write_chunks = math.ceil(write_bytes / MIB)
        disk_read_target = max(0.0, total_ops_target - write_chunks)
        miss = 1.0 - arch.cache_hit_fraction
        read_ops = int(round(disk_read_target / miss)) if miss > 1e-9 else int(round(disk_read_target))
        read_op_size = min(max(miss / max(arch.io_density_level, 1e-12), 4096.0), float(MIB))
        read_bytes = int(round(read_ops * read_op_size))

        pipe_idx = int(rng.integers(arch.pipeline_count))
        pipeline_id = f"{arch.name}.pipe{pipe_idx:02d}"
        user_id = f"user-{arch.name}-{pipe_idx // 2}"
        step_name = f"shuffle-s{int(rng.integers(4))}"
        write_phase = float(rng.uniform(0.2, 0.9))

        workers = max(1, int(round(workers_base * (size / size_median) ** 0.3 * rng.lognormal(0.0, noise_sigma))))
        threads = max(1, int(round(threads_base * rng.lognormal(0.0, noise_sigma))))
        buckets = max(1, int(round(workers * buckets_mult * rng.lognormal(0.0, noise_sigma))))
        initial_buckets = max(1, int(round(buckets * rng.uniform(0.5, 1.0))))
        shards = max(1, int(round(buckets * shards_mult * rng.lognormal(0.0, noise_sigma))))
        records = max(0, int(round(write_bytes / record_bytes * rng.lognormal(0.0, noise_sigma))))

        marker_token = marker
        if corrupt_p > 0.0 and rng.random() < corrupt_p:
            marker_token = all_markers[int(rng.integers(len(all_markers)))]
        tokens = (
            marker_token,
            f"bin/{arch.name}_runner",
            f"target://{arch.name}:job",
        )

        weekday, hour = _calendar_fields(config.epoch, t)
        jobs.append(
            Job(
                job_id=f"{arch_idx:02d}-{seq:07d}",
                pipeline_id=pipeline_id,
                user_id=user_id,
                step_name=step_name,
                arrival_time=t,
                end_time=t + lifetime,
                peak_bytes=size,
                write_phase_fraction=write_phase,
                raw_io=RawIoProfile(
                    read_ops=read_ops,
                    write_ops=write_ops,
                    read_bytes=read_bytes,
                    write_bytes=write_bytes,
                    cache_hit_fraction=arch.cache_hit_fraction,
                    mean_write_op_bytes=write_bytes / write_ops,
                ),
                resources=ResourceFeatures(
                    num_workers=workers,
                    num_worker_threads=threads,
                    num_buckets=buckets,
                    initial_num_buckets=initial_buckets,
                    num_shards=shards,
                    records_written=records,
                    weekday=weekday,
                    hour_of_day=hour,
                ),
                metadata_tokens=tokens,
            )
        )
    return jobs


def generate(config: GeneratorConfig) -> Trace:
    """Generate a trace; deterministic for a given (config, seed)."""
    config.validate()
    all_markers = [f"arch-{a.name}" for a in config.archetypes]
    jobs: list[Job] = []
    for idx, arch in enumerate(config.archetypes):
        jobs.extend(_gen_archetype_jobs(arch, idx, config, all_markers))
    return make_trace(jobs, epoch=config.epoch, generator_seed=config.seed)


def default_mix(duration: float = 7 * DAY_SECONDS, seed: int = 0) -> GeneratorConfig:
    """The five-archetype reference mix used by the acceptance experiments.

    Two hot streams (high I/O density, clear SSD winners), a lukewarm
    short-lived stream near break-even, and two cold streams whose byte
    cost makes SSD placement a net loss. All constants are invented.
    """
    gib = float(1 << 30)
    archetypes = (
        ArchetypeConfig(
            name="hot-short",
            arrival_rate=30.0,
            diurnal_amplitude=0.4,
            size_mu=math.log(2.5 * gib),
            size_sigma=0.7,
            lifetime_mu=math.log(1200.0),
            lifetime_sigma=0.6,
            io_density_level=3.0e-4,
            write_fraction=0.5,
            cache_hit_fraction=0.3,
            feature_noise=0.05,
            pipeline_count=6,
        ),
        ArchetypeConfig(
            name="hot-long",
            arrival_rate=10.0,
            diurnal_amplitude=0.3,
            size_mu=math.log(5.0 * gib),
            size_sigma=0.6,
            lifetime_mu=math.log(4.0 * 3600.0),
            lifetime_sigma=0.5,
            io_density_level=8.0e-5,
            write_fraction=0.45,
            cache_hit_fraction=0.3,
            feature_noise=0.05,
            pipeline_count=4,
        ),
        ArchetypeConfig(
            name="cold-short",
            arrival_rate=20.0,
            diurnal_amplitude=0.5,
            size_mu=math.log(1.5 * gib),
            size_sigma=0.7,
            lifetime_mu=math.log(2400.0),
            lifetime_sigma=0.6,
            io_density_level=2.0e-5,
            write_fraction=0.35,
            cache_hit_fraction=0.4,
            feature_noise=0.05,
            pipeline_count=5,
        ),
        ArchetypeConfig(
            name="cold-long",
            arrival_rate=8.0,
            diurnal_amplitude=0.2,
            size_mu=math.log(5.0 * gib),
            size_sigma=0.6,
            lifetime_mu=math.log(6.0 * 3600.0),
            lifetime_sigma=0.5,
            io_density_level=3.0e-6,
            write_fraction=0.3,
            cache_hit_fraction=0.5,
            feature_noise=0.05,
            pipeline_count=4,
        ),
        ArchetypeConfig(
            name="negative-savings-heavy",
            arrival_rate=5.0,
            diurnal_amplitude=0.1,
            size_mu=math.log(8.0 * gib),
            size_sigma=0.5,
            lifetime_mu=math.log(12.0 * 3600.0),
            lifetime_sigma=0.4,
            io_density_level=2.0e-7,
            write_fraction=0.15,
            cache_hit_fraction=0.6,
            feature_noise=0.05,
            pipeline_count=3,
        ),
    )
    return GeneratorConfig(archetypes=archetypes, duration=duration, seed=seed)
