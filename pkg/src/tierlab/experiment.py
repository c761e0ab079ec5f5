"""Experiment orchestration: quota sweeps, sensitivity grids, reports.

A sweep takes one spec and produces a deterministic CSV: the trace peak
is measured first with an unlimited quota, every (policy, quota, seed)
combination is simulated in constant-footprint mode, and clairvoyant
solver rows are appended per quota so reports can band the policies
against the upper bound. All floats that downstream checks compare are
written with repr() so they round-trip exactly.
"""

from __future__ import annotations

import concurrent.futures
import csv
import json
import math
import multiprocessing
import os
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from tierlab.costs import SSD, CostRates
from tierlab.labels import (
    CategoryBoundaries,
    FeatureVector,
    TrainingExample,
    build_training_set,
)
from tierlab.gbt import GbtParams, train_gbt
from tierlab.models import (
    CategoryModel,
    HashCategoryModel,
    PrecomputedCategoryModel,
    TrueCategoryModel,
    train_lifetime_regressor,
)
from tierlab.oracle import (
    OBJECTIVE_TCIO,
    OBJECTIVE_TCO,
    build_instance,
    solve,
    verify,
)
from tierlab.policies import (
    DEFAULT_DECISION_INTERVAL,
    DEFAULT_LOOKBACK,
    DEFAULT_REBUILD_INTERVAL,
    DEFAULT_STATS_WINDOW,
    DEFAULT_TOLERANCE,
    DEFAULT_TTL,
    AdaptiveCategoryPolicy,
    AlwaysPolicy,
    FirstFitPolicy,
    HeuristicAdmissionPolicy,
    LifetimeTtlPolicy,
    OracleReplayPolicy,
)
from tierlab.sim import CONSTANT, LINEAR_GROWTH, SimConfig, SimResult
from tierlab.sim import run as sim_run
from tierlab.sim import trace_spillover
from tierlab.trace import Trace, load_trace
from tierlab.workload import (
    DEFAULT_EPOCH,
    ArchetypeConfig,
    GeneratorConfig,
    default_mix,
    generate,
)

DEFAULT_QUOTA_GRID = (0.01, 0.1, 0.5, 1.0)
DEFAULT_SEEDS = (1, 2, 3)
DEFAULT_DURATION = 3 * 86400.0
DEFAULT_N_CATEGORIES = 15
DEFAULT_NODE_BUDGET = 200_000
# Training traces come from the same generator reseeded; keeps the label
# boundaries and the model honest (never fitted on the evaluated jobs).
TRAIN_SEED_OFFSET = 1000

SWEEP_POLICIES = (
    "firstfit",
    "heuristic",
    "lifetime",
    "adaptive-hash",
    "adaptive-ranking",
    "adaptive-ranking-true",
)
ORACLE_ROW_POLICIES = ("oracle-tco", "oracle-tcio")

SENSITIVITY_TOLERANCES = ((0.005, 0.03), (0.01, 0.15), (0.05, 0.25))
SENSITIVITY_WINDOWS = (600.0, 900.0, 1800.0)
SENSITIVITY_INTERVALS = (600.0, 900.0, 1800.0)
N_SWEEP_GRID = (2, 5, 15, 25, 35)

SWEEP_CSV = "sweep.csv"
SWEEP_SUMMARY = "summary.txt"
REPORT_FILE = "report.txt"

SWEEP_COLUMNS = (
    "policy",
    "quota_fraction",
    "seed",
    "quota_bytes",
    "tco_savings_pct",
    "tcio_savings_pct",
    "tco_saved",
    "tcio_saved",
    "spillover_pct",
    "n_ssd_scheduled",
    "oracle_value",
    "oracle_gap",
    "oracle_status",
    "oracle_nodes",
)


class SpecError(Exception):
    """The experiment spec itself is invalid (exit code 2)."""


class SubRunError(Exception):
    """One (policy, quota, seed) run failed (exit code 3)."""


class InvariantViolation(Exception):
    """A cross-run invariant was breached, e.g. dominance (exit code 4)."""


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything a sweep needs; file format documented in from_file."""

    output_dir: str
    trace_path: Optional[str] = None
    generator: Optional[GeneratorConfig] = None
    duration: float = DEFAULT_DURATION
    rates: CostRates = field(default_factory=CostRates)
    policies: tuple[str, ...] = SWEEP_POLICIES
    quota_grid: tuple[float, ...] = DEFAULT_QUOTA_GRID
    quota_mode: str = "fraction"  # "fraction" of measured peak, or "bytes"
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    n_categories: int = DEFAULT_N_CATEGORIES
    footprint_model: str = CONSTANT
    growth_fraction: float = 0.5
    tolerance: tuple[float, float] = DEFAULT_TOLERANCE
    t_w: float = DEFAULT_LOOKBACK
    t_l: float = DEFAULT_DECISION_INTERVAL
    ttl: float = DEFAULT_TTL
    rebuild_interval: float = DEFAULT_REBUILD_INTERVAL
    stats_window: float = DEFAULT_STATS_WINDOW
    node_budget: int = DEFAULT_NODE_BUDGET
    oracle_rows: bool = True
    jobs: int = 1

    def validate(self) -> None:
        if not self.policies:
            raise SpecError("policy list is empty")
        if not self.quota_grid:
            raise SpecError("quota grid is empty")
        if not self.seeds:
            raise SpecError("seed list is empty")
        for p in self.policies:
            if p not in SWEEP_POLICIES:
                raise SpecError(f"unknown policy {p!r}")
        if self.quota_mode not in ("fraction", "bytes"):
            raise SpecError(f"unknown quota mode {self.quota_mode!r}")
        if any(q < 0 for q in self.quota_grid):
            raise SpecError("quotas must be nonnegative")
        if self.footprint_model not in (CONSTANT, LINEAR_GROWTH):
            raise SpecError(f"unknown footprint model {self.footprint_model!r}")
        if self.n_categories < 2:
            raise SpecError("need at least 2 categories")
        if self.node_budget is not None and self.node_budget < 1:
            raise SpecError("node budget must be positive")
        if self.jobs < 1:
            raise SpecError("jobs must be >= 1")
        low, high = self.tolerance
        if not (0.0 <= low < high <= 1.0):
            raise SpecError("tolerance range must satisfy 0 <= low < high <= 1")
        if self.trace_path is not None and self.generator is not None:
            raise SpecError("give either a trace path or a generator, not both")

    @classmethod
    def from_file(cls, path, output_dir: Optional[str] = None) -> "ExperimentSpec":
        """Load a JSON spec file.

        Keys (all optional unless noted): output_dir, trace, generator
        (inline generator config), generator_path, duration, rates (path),
        policies, quotas, quota_mode, seeds, n_categories, footprint,
        growth_fraction, tolerance ([low, high]), tw, tl, ttl,
        rebuild_interval, stats_window, node_budget, oracle_rows, jobs.
        """
        with open(path, "r", encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as e:
                raise SpecError(f"{path}: {e}") from None
        known = {
            "output_dir", "trace", "generator", "generator_path", "duration",
            "rates", "policies", "quotas", "quota_mode", "seeds", "n_categories",
            "footprint", "growth_fraction", "tolerance", "tw", "tl", "ttl",
            "rebuild_interval", "stats_window", "node_budget", "oracle_rows", "jobs",
        }
        unknown = set(data) - known
        if unknown:
            raise SpecError(f"unknown spec keys: {sorted(unknown)}")
        kwargs: dict = {}
        out = output_dir or data.get("output_dir")
        if out is None:
            raise SpecError("spec needs an output_dir (or pass --out)")
        kwargs["output_dir"] = out
        if "trace" in data:
            kwargs["trace_path"] = data["trace"]
        if "generator" in data and "generator_path" in data:
            raise SpecError("generator and generator_path are mutually exclusive")
        try:
            if "generator" in data:
                kwargs["generator"] = _generator_from_dict(data["generator"])
            elif "generator_path" in data:
                kwargs["generator"] = GeneratorConfig.from_file(data["generator_path"])
            if "rates" in data:
                kwargs["rates"] = CostRates.from_file(data["rates"])
        except (ValueError, TypeError, KeyError, OSError) as e:
            raise SpecError(str(e)) from None
        if "duration" in data:
            kwargs["duration"] = float(data["duration"])
        if "policies" in data:
            kwargs["policies"] = tuple(data["policies"])
        if "quotas" in data:
            kwargs["quota_grid"] = tuple(float(q) for q in data["quotas"])
        if "quota_mode" in data:
            kwargs["quota_mode"] = data["quota_mode"]
        if "seeds" in data:
            kwargs["seeds"] = tuple(int(s) for s in data["seeds"])
        if "n_categories" in data:
            kwargs["n_categories"] = int(data["n_categories"])
        if "footprint" in data:
            kwargs["footprint_model"] = data["footprint"]
        if "growth_fraction" in data:
            kwargs["growth_fraction"] = float(data["growth_fraction"])
        if "tolerance" in data:
            lo, hi = data["tolerance"]
            kwargs["tolerance"] = (float(lo), float(hi))
        if "tw" in data:
            kwargs["t_w"] = float(data["tw"])
        if "tl" in data:
            kwargs["t_l"] = float(data["tl"])
        if "ttl" in data:
            kwargs["ttl"] = float(data["ttl"])
        if "rebuild_interval" in data:
            kwargs["rebuild_interval"] = float(data["rebuild_interval"])
        if "stats_window" in data:
            kwargs["stats_window"] = float(data["stats_window"])
        if "node_budget" in data:
            kwargs["node_budget"] = int(data["node_budget"])
        if "oracle_rows" in data:
            kwargs["oracle_rows"] = bool(data["oracle_rows"])
        if "jobs" in data:
            kwargs["jobs"] = int(data["jobs"])
        spec = cls(**kwargs)
        spec.validate()
        return spec


def _generator_from_dict(data: dict) -> GeneratorConfig:
    archetypes = tuple(ArchetypeConfig(**a) for a in data["archetypes"])
    cfg = GeneratorConfig(
        archetypes=archetypes,
        duration=float(data["duration"]),
        seed=int(data.get("seed", 0)),
        epoch=float(data.get("epoch", DEFAULT_EPOCH)),
    )
    cfg.validate()
    return cfg


@dataclass
class SeedContext:
    """Per-seed artifacts shared by every run unit of that seed."""

    seed: int
    eval_trace: Trace
    features: list[FeatureVector]
    eval_examples: list[TrainingExample]
    boundaries: CategoryBoundaries
    models: dict[str, CategoryModel]
    lifetime_mu_sigma: dict[str, tuple[float, float]]
    peak_ssd_bytes: float
    baseline_tco: float
    baseline_tcio: float
    valid_accuracy: float


class _FrozenLifetime:
    """Per-job (mu, sigma) predictions computed once up front."""

    def __init__(self, by_job: dict[str, tuple[float, float]]):
        self.by_job = by_job

    def predict_for(self, job, features) -> tuple[float, float]:
        return self.by_job[job.job_id]


def _eval_generator(spec: ExperimentSpec, seed: int) -> GeneratorConfig:
    base = spec.generator if spec.generator is not None else default_mix(spec.duration)
    return replace(base, seed=seed)


def build_seed_context(spec: ExperimentSpec, seed: int,
                       n_categories: Optional[int] = None) -> SeedContext:
    """Generate (or load) traces, label, train, and measure the peak."""
    n_cats = n_categories if n_categories is not None else spec.n_categories
    if spec.trace_path is not None:
        eval_trace = load_trace(spec.trace_path)
        train_trace = eval_trace  # self-trained; generator mode keeps them disjoint
    else:
        eval_trace = generate(_eval_generator(spec, seed))
        train_trace = generate(
            replace(_eval_generator(spec, seed), seed=seed + TRAIN_SEED_OFFSET)
        )

    train_examples, boundaries = build_training_set(train_trace, spec.rates, n_cats)
    eval_examples, _ = build_training_set(eval_trace, spec.rates, n_cats, boundaries)
    features = [ex.features for ex in eval_examples]

    gbt = train_gbt(train_examples, GbtParams(), n_categories=n_cats)
    models: dict[str, CategoryModel] = {
        "true": TrueCategoryModel.from_examples(eval_examples, n_cats),
        "gbt": PrecomputedCategoryModel.from_model(gbt, eval_trace.jobs, features),
        "hash": HashCategoryModel(n_cats),
    }

    predictor = train_lifetime_regressor(
        [ex.features for ex in train_examples],
        [job.end_time - job.arrival_time for job in train_trace.jobs],
        [job.pipeline_id for job in train_trace.jobs],
    )
    mus = predictor.regressor.predict_batch(features)
    lifetime_mu_sigma = {
        job.job_id: (math.exp(mu), predictor.predict_sigma(job.pipeline_id))
        for job, mu in zip(eval_trace.jobs, mus)
    }

    peak_cfg = SimConfig(ssd_quota=float("inf"), rates=spec.rates,
                         footprint_model=CONSTANT)
    peak_res = sim_run(eval_trace, AlwaysPolicy(SSD), peak_cfg, features=features)

    return SeedContext(
        seed=seed,
        eval_trace=eval_trace,
        features=features,
        eval_examples=eval_examples,
        boundaries=boundaries,
        models=models,
        lifetime_mu_sigma=lifetime_mu_sigma,
        peak_ssd_bytes=peak_res.peak_ssd_bytes,
        baseline_tco=peak_res.baseline_tco,
        baseline_tcio=peak_res.baseline_tcio,
        valid_accuracy=float(gbt.info()["valid_accuracy"]),
    )


def build_policy(name: str, ctx: SeedContext, quota: float, spec: ExperimentSpec,
                 tolerance: Optional[tuple[float, float]] = None,
                 t_w: Optional[float] = None, t_l: Optional[float] = None):
    tol = tolerance if tolerance is not None else spec.tolerance
    tw = t_w if t_w is not None else spec.t_w
    tl = t_l if t_l is not None else spec.t_l
    if name == "firstfit":
        return FirstFitPolicy()
    if name == "heuristic":
        return HeuristicAdmissionPolicy(spec.rates, quota,
                                        rebuild_interval=spec.rebuild_interval,
                                        stats_window=spec.stats_window)
    if name == "lifetime":
        return LifetimeTtlPolicy(_FrozenLifetime(ctx.lifetime_mu_sigma), ttl=spec.ttl)
    if name == "adaptive-hash":
        return AdaptiveCategoryPolicy(ctx.models["hash"], tol, tw, tl)
    if name == "adaptive-ranking":
        return AdaptiveCategoryPolicy(ctx.models["gbt"], tol, tw, tl)
    if name == "adaptive-ranking-true":
        return AdaptiveCategoryPolicy(ctx.models["true"], tol, tw, tl)
    raise SpecError(f"unknown policy {name!r}")


def _quota_bytes(spec: ExperimentSpec, ctx: SeedContext, q: float) -> float:
    return q * ctx.peak_ssd_bytes if spec.quota_mode == "fraction" else q


def _quota_fraction(spec: ExperimentSpec, ctx: SeedContext, q: float) -> float:
    if spec.quota_mode == "fraction":
        return q
    return q / ctx.peak_ssd_bytes if ctx.peak_ssd_bytes > 0 else 0.0


def _overall_spillover(result: SimResult, trace: Trace, rates: CostRates) -> float:
    return trace_spillover(result.records, trace, rates)


def _policy_row(spec: ExperimentSpec, ctx: SeedContext, q: float, name: str) -> dict:
    quota = _quota_bytes(spec, ctx, q)
    policy = build_policy(name, ctx, quota, spec)
    config = SimConfig(ssd_quota=quota, rates=spec.rates,
                       footprint_model=spec.footprint_model,
                       growth_fraction=spec.growth_fraction)
    result = sim_run(ctx.eval_trace, policy, config, features=ctx.features)
    return {
        "policy": name,
        "quota_fraction": repr(float(_quota_fraction(spec, ctx, q))),
        "seed": str(ctx.seed),
        "quota_bytes": repr(float(quota)),
        "tco_savings_pct": "%.6f" % (100.0 * result.total_tco_savings_percent),
        "tcio_savings_pct": "%.6f" % (100.0 * result.total_tcio_savings_percent),
        "tco_saved": repr(float(result.baseline_tco - result.realized_tco)),
        "tcio_saved": repr(float(result.baseline_tcio - result.realized_tcio)),
        "spillover_pct": "%.6f" % (100.0 * _overall_spillover(result, ctx.eval_trace, spec.rates)),
        "n_ssd_scheduled": str(result.n_ssd_scheduled),
        "oracle_value": "",
        "oracle_gap": "",
        "oracle_status": "",
        "oracle_nodes": "",
    }


def _oracle_row(spec: ExperimentSpec, ctx: SeedContext, q: float, row_name: str) -> dict:
    objective = OBJECTIVE_TCO if row_name == "oracle-tco" else OBJECTIVE_TCIO
    quota = _quota_bytes(spec, ctx, q)
    inst = build_instance(ctx.eval_trace, spec.rates, quota, objective)
    sol = solve(inst, node_budget=spec.node_budget)
    if not verify(inst, sol):
        raise InvariantViolation(
            f"oracle solution failed verification ({row_name}, quota {q}, seed {ctx.seed})"
        )
    placements = {job.job_id: x for job, x in zip(ctx.eval_trace.jobs, sol.x)}
    config = SimConfig(ssd_quota=quota, rates=spec.rates, footprint_model=CONSTANT)
    result = sim_run(ctx.eval_trace, OracleReplayPolicy(placements), config,
                     features=ctx.features)
    if result.n_spilled:
        raise InvariantViolation(
            f"oracle replay spilled ({row_name}, quota {q}, seed {ctx.seed})"
        )
    return {
        "policy": row_name,
        "quota_fraction": repr(float(_quota_fraction(spec, ctx, q))),
        "seed": str(ctx.seed),
        "quota_bytes": repr(float(quota)),
        "tco_savings_pct": "%.6f" % (100.0 * result.total_tco_savings_percent),
        "tcio_savings_pct": "%.6f" % (100.0 * result.total_tcio_savings_percent),
        "tco_saved": repr(float(result.baseline_tco - result.realized_tco)),
        "tcio_saved": repr(float(result.baseline_tcio - result.realized_tcio)),
        "spillover_pct": "%.6f" % (100.0 * _overall_spillover(result, ctx.eval_trace, spec.rates)),
        "n_ssd_scheduled": str(result.n_ssd_scheduled),
        "oracle_value": repr(float(sol.objective_value)),
        "oracle_gap": repr(float(sol.gap)),
        "oracle_status": sol.status,
        "oracle_nodes": str(sol.nodes_explored),
    }


# Work-pool plumbing: contexts are registered before the pool forks, so
# workers read them from inherited memory instead of pickled arguments.
_POOL_SPEC: Optional[ExperimentSpec] = None
_POOL_CONTEXTS: dict[int, SeedContext] = {}


def _run_unit(unit: tuple) -> tuple[tuple, dict]:
    kind, seed, q, name = unit
    spec = _POOL_SPEC
    ctx = _POOL_CONTEXTS[seed]
    try:
        if kind == "policy":
            row = _policy_row(spec, ctx, q, name)
        else:
            row = _oracle_row(spec, ctx, q, name)
    except InvariantViolation:
        raise
    except Exception as e:
        raise SubRunError(f"policy={name} quota={q} seed={seed}: {e}") from e
    return unit, row


def _execute_units(spec: ExperimentSpec, units: list[tuple]) -> dict[tuple, dict]:
    global _POOL_SPEC
    _POOL_SPEC = spec
    results: dict[tuple, dict] = {}
    if spec.jobs == 1 or len(units) <= 1:
        for unit in units:
            key, row = _run_unit(unit)
            results[key] = row
        return results
    mp = multiprocessing.get_context("fork")
    with concurrent.futures.ProcessPoolExecutor(max_workers=spec.jobs,
                                                mp_context=mp) as pool:
        for key, row in pool.map(_run_unit, units):
            results[key] = row
    return results


def run_sweep(spec: ExperimentSpec) -> list[dict]:
    """The full grid; writes sweep.csv and summary.txt, returns the rows."""
    spec.validate()
    os.makedirs(spec.output_dir, exist_ok=True)
    for seed in spec.seeds:
        _POOL_CONTEXTS[seed] = build_seed_context(spec, seed)

    units: list[tuple] = []
    for seed in spec.seeds:
        for q in spec.quota_grid:
            for name in spec.policies:
                units.append(("policy", seed, q, name))
            if spec.oracle_rows:
                for name in ORACLE_ROW_POLICIES:
                    units.append(("oracle", seed, q, name))
    try:
        results = _execute_units(spec, units)
    finally:
        _POOL_CONTEXTS.clear()

    policy_order = {name: i for i, name in enumerate(SWEEP_POLICIES + ORACLE_ROW_POLICIES)}
    units.sort(key=lambda u: (u[1], u[2], policy_order[u[3]]))
    rows = [results[u] for u in units]

    _write_csv(os.path.join(spec.output_dir, SWEEP_CSV), SWEEP_COLUMNS, rows)
    summary = summarize_rows(rows)
    with open(os.path.join(spec.output_dir, SWEEP_SUMMARY), "w", encoding="utf-8") as fh:
        fh.write(summary)
    return rows


def _write_csv(path: str, columns: Sequence[str], rows: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _group_rows(rows: Sequence[dict]):
    by_quota: dict[float, dict[str, list[dict]]] = {}
    for row in rows:
        q = float(row["quota_fraction"])
        by_quota.setdefault(q, {}).setdefault(row["policy"], []).append(row)
    return by_quota


def summarize_rows(rows: Sequence[dict]) -> str:
    """Per-quota ranking table with mean and range over seeds."""
    by_quota = _group_rows(rows)
    lines: list[str] = []
    for q in sorted(by_quota):
        lines.append(f"quota fraction {q:g}")
        means = []
        for policy, prows in by_quota[q].items():
            vals = [float(r["tco_savings_pct"]) for r in prows]
            means.append((sum(vals) / len(vals), min(vals), max(vals), policy, prows))
        means.sort(key=lambda m: (-m[0], m[3]))
        for mean, lo, hi, policy, prows in means:
            extra = ""
            gaps = [r["oracle_gap"] for r in prows if r["oracle_gap"]]
            if gaps:
                worst = max(float(g) for g in gaps)
                statuses = {r["oracle_status"] for r in prows}
                extra = f"  [gap<={worst:.4g}, {'/'.join(sorted(statuses))}]"
            lines.append(
                f"  {policy:<22} tco_savings {mean:8.4f}%"
                f"  (range {lo:.4f}..{hi:.4f} over {len(prows)} seed(s)){extra}"
            )
        lines.append("")
    return "\n".join(lines)


def check_dominance(rows: Sequence[dict], tol: float = 1e-9) -> list[str]:
    """Constant-mode oracle dominance; returns violation descriptions."""
    by_key: dict[tuple[float, str], dict[str, dict]] = {}
    for row in rows:
        key = (float(row["quota_fraction"]), row["seed"])
        by_key.setdefault(key, {})[row["policy"]] = row
    violations = []
    for (q, seed), policies in sorted(by_key.items()):
        oracle = policies.get("oracle-tco")
        if oracle is None:
            continue
        bound = float(oracle["oracle_value"])
        margin = tol * max(1.0, abs(bound))
        for name, row in sorted(policies.items()):
            if name in ORACLE_ROW_POLICIES:
                continue
            saved = float(row["tco_saved"])
            if saved > bound + margin:
                violations.append(
                    f"policy {name} saved {saved!r} > oracle value {bound!r}"
                    f" at quota {q:g} seed {seed}"
                )
    return violations


def load_sweep_rows(results_dir: str) -> list[dict]:
    path = os.path.join(results_dir, SWEEP_CSV)
    if not os.path.exists(path):
        raise SpecError(f"no {SWEEP_CSV} in {results_dir}")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def build_report(results_dir: str) -> str:
    """Ranking report over an existing sweep; raises on dominance breach."""
    rows = load_sweep_rows(results_dir)
    if not rows:
        raise SpecError("sweep.csv has no rows")
    lines = [summarize_rows(rows)]

    learned = ("adaptive-ranking",)
    baselines = ("firstfit", "heuristic", "lifetime", "adaptive-hash")
    by_quota = _group_rows(rows)
    lines.append("best learned (adaptive-ranking) vs best baseline, mean tco savings:")
    for q in sorted(by_quota):
        groups = by_quota[q]

        def mean_of(names):
            best = None
            for name in names:
                if name not in groups:
                    continue
                vals = [float(r["tco_savings_pct"]) for r in groups[name]]
                m = sum(vals) / len(vals)
                if best is None or m > best[0]:
                    best = (m, name)
            return best

        lp = mean_of(learned)
        bp = mean_of(baselines)
        if lp is None or bp is None:
            continue
        ratio = lp[0] / bp[0] if bp[0] > 0 else float("inf")
        lines.append(
            f"  quota {q:g}: {lp[1]} {lp[0]:.4f}% vs {bp[1]} {bp[0]:.4f}%"
            f"  (ratio {ratio:.3f})"
        )
    lines.append("")

    violations = check_dominance(rows)
    if violations:
        text = "\n".join(lines + ["DOMINANCE VIOLATIONS:"] + [f"  {v}" for v in violations])
        _write_report(results_dir, text)
        raise InvariantViolation("; ".join(violations))
    lines.append("oracle dominance holds on all constant-mode rows.")
    text = "\n".join(lines)
    _write_report(results_dir, text)
    return text


def _write_report(results_dir: str, text: str) -> None:
    with open(os.path.join(results_dir, REPORT_FILE), "w", encoding="utf-8") as fh:
        fh.write(text + "\n")


SENSITIVITY_COLUMNS = (
    "preset",
    "policy",
    "seed",
    "quota_fraction",
    "n_categories",
    "t_low",
    "t_high",
    "t_w",
    "t_l",
    "valid_accuracy",
    "tco_savings_pct",
    "tcio_savings_pct",
    "spillover_pct",
)


def run_sensitivity(spec: ExperimentSpec, preset: str = "hyper",
                    quota_fractions: Sequence[float] = (0.1,)) -> list[dict]:
    """Hyperparameter grid ("hyper") or category-count sweep ("n").

    hyper: the full tolerance x lookback x interval grid (27 points) for
    the ranking policy, one seed, plus a firstfit reference row per quota.
    n: retrains the model per category count and reruns the ranking
    policy, recording validation accuracy alongside savings.
    """
    spec.validate()
    if preset not in ("hyper", "n"):
        raise SpecError(f"unknown sensitivity preset {preset!r}")
    os.makedirs(spec.output_dir, exist_ok=True)
    seed = spec.seeds[0]
    rows: list[dict] = []

    def sim_row(ctx, policy_name, q, tol, tw, tl, n_cats, accuracy) -> dict:
        quota = _quota_bytes(spec, ctx, q)
        policy = build_policy(policy_name, ctx, quota, spec, tolerance=tol, t_w=tw, t_l=tl)
        config = SimConfig(ssd_quota=quota, rates=spec.rates,
                           footprint_model=spec.footprint_model,
                           growth_fraction=spec.growth_fraction)
        try:
            result = sim_run(ctx.eval_trace, policy, config, features=ctx.features)
        except Exception as e:
            raise SubRunError(f"policy={policy_name} quota={q} seed={seed}: {e}") from e
        return {
            "preset": preset,
            "policy": policy_name,
            "seed": str(seed),
            "quota_fraction": repr(float(_quota_fraction(spec, ctx, q))),
            "n_categories": str(n_cats),
            "t_low": repr(float(tol[0])) if tol is not None else "",
            "t_high": repr(float(tol[1])) if tol is not None else "",
            "t_w": repr(float(tw)) if tw is not None else "",
            "t_l": repr(float(tl)) if tl is not None else "",
            "valid_accuracy": repr(float(accuracy)),
            "tco_savings_pct": "%.6f" % (100.0 * result.total_tco_savings_percent),
            "tcio_savings_pct": "%.6f" % (100.0 * result.total_tcio_savings_percent),
            "spillover_pct": "%.6f" % (100.0 * _overall_spillover(result, ctx.eval_trace, spec.rates)),
        }

    if preset == "hyper":
        ctx = build_seed_context(spec, seed)
        for q in quota_fractions:
            for tol in SENSITIVITY_TOLERANCES:
                for tw in SENSITIVITY_WINDOWS:
                    for tl in SENSITIVITY_INTERVALS:
                        rows.append(sim_row(ctx, "adaptive-ranking", q, tol, tw, tl,
                                            spec.n_categories, ctx.valid_accuracy))
            rows.append(sim_row(ctx, "firstfit", q, None, None, None,
                                spec.n_categories, ctx.valid_accuracy))
        out = os.path.join(spec.output_dir, "sensitivity_hyper.csv")
    else:
        for n_cats in N_SWEEP_GRID:
            ctx = build_seed_context(spec, seed, n_categories=n_cats)
            for q in quota_fractions:
                rows.append(sim_row(ctx, "adaptive-ranking", q, spec.tolerance,
                                    spec.t_w, spec.t_l, n_cats, ctx.valid_accuracy))
        out = os.path.join(spec.output_dir, "sensitivity_n.csv")

    _write_csv(out, SENSITIVITY_COLUMNS, rows)
    return rows


def sensitivity_band(rows: Sequence[dict]) -> dict[float, tuple[float, float]]:
    """Min/max adaptive-ranking savings per quota from sensitivity rows."""
    band: dict[float, tuple[float, float]] = {}
    for row in rows:
        if row["policy"] != "adaptive-ranking":
            continue
        q = float(row["quota_fraction"])
        v = float(row["tco_savings_pct"])
        lo, hi = band.get(q, (v, v))
        band[q] = (min(lo, v), max(hi, v))
    return band


def run_act_series(spec: ExperimentSpec, policy_name: str = "adaptive-ranking",
                   quota_fraction: float = 0.1,
                   out_name: str = "act_series.csv") -> list[tuple[float, int, float]]:
    """One adaptive run with the threshold trajectory recorded."""
    spec.validate()
    if not policy_name.startswith("adaptive-"):
        raise SpecError("act series needs an adaptive policy")
    os.makedirs(spec.output_dir, exist_ok=True)
    seed = spec.seeds[0]
    ctx = build_seed_context(spec, seed)
    quota = _quota_bytes(spec, ctx, quota_fraction)
    policy = build_policy(policy_name, ctx, quota, spec)
    config = SimConfig(ssd_quota=quota, rates=spec.rates,
                       footprint_model=spec.footprint_model,
                       growth_fraction=spec.growth_fraction,
                       record_act_series=True)
    try:
        result = sim_run(ctx.eval_trace, policy, config, features=ctx.features)
    except Exception as e:
        raise SubRunError(f"policy={policy_name} quota={quota_fraction} seed={seed}: {e}") from e
    series = result.act_series or []
    path = os.path.join(spec.output_dir, out_name)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["time", "act", "spillover"])
        for t, act, h in series:
            writer.writerow([repr(float(t)), str(act), repr(float(h))])
    return series
