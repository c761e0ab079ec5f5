"""Command-line front end.

Subcommands cover the whole workflow: generate traces, label them, train
models, simulate single runs, solve the clairvoyant placement problem,
and drive the sweep/sensitivity/report experiments.

Exit codes: 0 success, 2 bad spec or arguments, 3 a sub-run failed,
4 an invariant was violated (e.g. a policy beating the clairvoyant
bound in constant mode).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from typing import Optional

from tierlab.costs import CostRates
from tierlab.experiment import (
    DEFAULT_DURATION,
    DEFAULT_N_CATEGORIES,
    DEFAULT_NODE_BUDGET,
    DEFAULT_QUOTA_GRID,
    DEFAULT_SEEDS,
    SWEEP_POLICIES,
    ExperimentSpec,
    InvariantViolation,
    SpecError,
    SubRunError,
    build_report,
    run_act_series,
    run_sensitivity,
    run_sweep,
    sensitivity_band,
)
from tierlab.gbt import GbtParams, TrainedGbt, train_gbt
from tierlab.labels import (
    build_features,
    build_training_set,
    load_training_set,
    save_training_set,
)
from tierlab.models import (
    HashCategoryModel,
    LifetimePredictor,
    PrecomputedCategoryModel,
    TrueCategoryModel,
    feature_group_importance,
    train_lifetime_regressor,
)
from tierlab.oracle import (
    build_instance,
    load_solution,
    save_instance,
    save_solution,
    solve,
    verify,
)
from tierlab.policies import (
    DEFAULT_DECISION_INTERVAL,
    DEFAULT_LOOKBACK,
    DEFAULT_REBUILD_INTERVAL,
    DEFAULT_TOLERANCE,
    DEFAULT_TTL,
    AdaptiveCategoryPolicy,
    AlwaysPolicy,
    FirstFitPolicy,
    HeuristicAdmissionPolicy,
    LifetimeTtlPolicy,
    OracleReplayPolicy,
)
from tierlab.costs import HDD, SSD
from tierlab.sim import (
    CONSTANT,
    LINEAR_GROWTH,
    SimConfig,
    run as sim_run,
    write_job_csv,
    write_summary_csv,
)
from tierlab.trace import TraceError, load_trace, save_trace, validate_trace
from tierlab.workload import GeneratorConfig, default_mix, generate

POLICY_CHOICES = (
    "firstfit",
    "heuristic",
    "lifetime",
    "adaptive-hash",
    "adaptive-ranking",
    "adaptive-ranking-true",
    "oracle-replay",
    "always-ssd",
    "always-hdd",
)


def _load_rates(path: Optional[str]) -> CostRates:
    return CostRates.from_file(path) if path else CostRates()


def _parse_act_range(text: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise SpecError("--act-range wants LOW,HIGH")
    return float(parts[0]), float(parts[1])


def cmd_generate(args) -> int:
    if args.config:
        cfg = GeneratorConfig.from_file(args.config)
        if args.duration is not None:
            cfg = replace(cfg, duration=args.duration)
        cfg = replace(cfg, seed=args.seed)
    else:
        cfg = default_mix(args.duration if args.duration is not None else DEFAULT_DURATION,
                          args.seed)
    trace = generate(cfg)
    save_trace(trace, args.out)
    print(f"wrote {len(trace.jobs)} jobs to {args.out}")
    return 0


def cmd_validate(args) -> int:
    trace = load_trace(args.trace)
    validate_trace(trace)
    print(f"{args.trace}: ok ({len(trace.jobs)} jobs)")
    return 0


def cmd_rates(args) -> int:
    if args.action != "show":
        raise SpecError(f"unknown rates action {args.action!r}")
    print(_load_rates(args.rates).to_json())
    return 0


def cmd_label(args) -> int:
    trace = load_trace(args.trace)
    rates = _load_rates(args.rates)
    boundaries = None
    if args.boundaries:
        from tierlab.labels import CategoryBoundaries

        with open(args.boundaries, "r", encoding="utf-8") as fh:
            boundaries = CategoryBoundaries.from_json(fh.read())
    examples, boundaries = build_training_set(trace, rates, args.n_categories, boundaries)
    save_training_set(examples, boundaries, args.out)
    n_neg = sum(1 for ex in examples if ex.category == 0)
    print(f"wrote {len(examples)} examples to {args.out} "
          f"({n_neg} negative-savings, N={args.n_categories})")
    return 0


def cmd_train(args) -> int:
    examples, boundaries = load_training_set(args.labeled)
    params = GbtParams(
        max_trees=args.trees,
        max_depth=args.depth,
        learning_rate=args.learning_rate,
        histogram_bins=args.bins,
        validation_fraction=args.validation_fraction,
        early_stop_rounds=args.early_stopping,
        seed=args.seed,
    )
    model = train_gbt(examples, params, n_categories=boundaries.n_categories)
    model.save(args.out)
    info = model.info()
    print(f"wrote {args.out}: {info['rounds']} rounds, "
          f"valid accuracy {info['valid_accuracy']:.4f}")
    if args.lifetime_out:
        if not args.trace:
            raise SpecError("--lifetime-out needs --trace for lifetimes")
        trace = load_trace(args.trace)
        rates = _load_rates(args.rates)
        features = build_features(trace, rates)
        predictor = train_lifetime_regressor(
            features,
            [j.end_time - j.arrival_time for j in trace.jobs],
            [j.pipeline_id for j in trace.jobs],
        )
        predictor.save(args.lifetime_out)
        print(f"wrote {args.lifetime_out}")
    return 0


def cmd_model_info(args) -> int:
    with open(args.model, "r", encoding="utf-8") as fh:
        head = json.load(fh)
    fmt = head.get("format")
    if fmt == "tierlab-gbt":
        info = TrainedGbt.load(args.model).info()
        print(json.dumps(info, indent=2, sort_keys=True))
    elif fmt == "tierlab-lifetime":
        predictor = LifetimePredictor.load(args.model)
        print(json.dumps({
            "format": fmt,
            "sigma_global": predictor.sigma_global,
            "n_pipelines": len(predictor.sigma_by_pipeline),
        }, indent=2, sort_keys=True))
    else:
        raise SpecError(f"unrecognized model format {fmt!r}")
    return 0


def cmd_importance(args) -> int:
    examples, boundaries = load_training_set(args.labeled)
    imp = feature_group_importance(examples, boundaries.n_categories)
    rows = imp.to_csv_rows()
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)
        print(f"wrote {args.out}")
    else:
        for row in rows:
            print(",".join(str(c) for c in row))
    return 0


def _build_sim_policy(args, trace, rates, features):
    name = args.policy
    tol = _parse_act_range(args.act_range) if args.act_range else DEFAULT_TOLERANCE
    if name == "firstfit":
        return FirstFitPolicy()
    if name == "heuristic":
        return HeuristicAdmissionPolicy(rates, args.quota,
                                        rebuild_interval=args.rebuild_interval)
    if name == "lifetime":
        if not args.lifetime_model:
            raise SpecError("--policy lifetime needs --lifetime-model")
        return LifetimeTtlPolicy(LifetimePredictor.load(args.lifetime_model), ttl=args.ttl)
    if name == "adaptive-hash":
        return AdaptiveCategoryPolicy(HashCategoryModel(args.n_categories),
                                      tol, args.tw, args.tl)
    if name == "adaptive-ranking":
        if not args.model:
            raise SpecError("--policy adaptive-ranking needs --model")
        gbt = TrainedGbt.load(args.model)
        pre = PrecomputedCategoryModel.from_model(gbt, trace.jobs, features)
        return AdaptiveCategoryPolicy(pre, tol, args.tw, args.tl)
    if name == "adaptive-ranking-true":
        if not args.labeled:
            raise SpecError("--policy adaptive-ranking-true needs --labeled")
        examples, boundaries = load_training_set(args.labeled)
        model = TrueCategoryModel.from_examples(examples, boundaries.n_categories)
        return AdaptiveCategoryPolicy(model, tol, args.tw, args.tl)
    if name == "oracle-replay":
        if not args.placements:
            raise SpecError("--policy oracle-replay needs --placements")
        _, placements = load_solution(args.placements)
        return OracleReplayPolicy(placements)
    if name == "always-ssd":
        return AlwaysPolicy(SSD)
    if name == "always-hdd":
        return AlwaysPolicy(HDD)
    raise SpecError(f"unknown policy {name!r}")


def cmd_simulate(args) -> int:
    trace = load_trace(args.trace)
    rates = _load_rates(args.rates)
    features = build_features(trace, rates)
    policy = _build_sim_policy(args, trace, rates, features)
    config = SimConfig(
        ssd_quota=args.quota,
        rates=rates,
        footprint_model=args.footprint,
        growth_fraction=args.growth_fraction,
        record_act_series=args.policy.startswith("adaptive-"),
    )
    result = sim_run(trace, policy, config, features=features)
    print(f"policy={result.policy_name} quota={args.quota:g} "
          f"footprint={args.footprint}")
    print(f"tco savings  {100.0 * result.total_tco_savings_percent:.4f}% "
          f"(baseline {result.baseline_tco:.6g}, realized {result.realized_tco:.6g})")
    print(f"tcio savings {100.0 * result.total_tcio_savings_percent:.4f}% "
          f"(baseline {result.baseline_tcio:.6g}, realized {result.realized_tcio:.6g})")
    print(f"ssd-scheduled {result.n_ssd_scheduled}/{len(trace.jobs)}, "
          f"spilled {result.n_spilled}, peak {result.peak_ssd_bytes:.6g} bytes")
    if args.out_jobs:
        write_job_csv(result, args.out_jobs)
        print(f"wrote {args.out_jobs}")
    if args.out_summary:
        write_summary_csv(result, args.out_summary)
        print(f"wrote {args.out_summary}")
    return 0


def cmd_oracle(args) -> int:
    trace = load_trace(args.trace)
    rates = _load_rates(args.rates)
    inst = build_instance(trace, rates, args.quota, args.objective)
    if args.out_instance:
        save_instance(inst, args.out_instance)
    sol = solve(inst, node_budget=args.node_budget, time_budget=args.budget)
    if not verify(inst, sol):
        raise InvariantViolation("solver output failed independent verification")
    rel = sol.gap / sol.objective_value if sol.objective_value > 0 else float("inf")
    gap_txt = f" gap={sol.gap:.6g} ({100.0 * rel:.2f}%)" if sol.status == "bounded" else ""
    print(f"objective={args.objective} quota={args.quota:g} "
          f"value={sol.objective_value:.6f} status={sol.status}{gap_txt} "
          f"nodes={sol.nodes_explored} selected={sum(sol.x)}")
    if args.out_solution:
        save_solution(inst, sol, args.out_solution)
        print(f"wrote {args.out_solution}")
    return 0


def _spec_from_args(args) -> ExperimentSpec:
    if args.spec:
        spec = ExperimentSpec.from_file(args.spec, output_dir=args.out)
    else:
        if not args.out:
            raise SpecError("give --spec or --out")
        spec = ExperimentSpec(output_dir=args.out)
    overrides = {}
    if args.duration is not None:
        overrides["duration"] = args.duration
    if args.seeds is not None:
        overrides["seeds"] = tuple(int(s) for s in args.seeds.split(","))
    if args.quotas is not None:
        overrides["quota_grid"] = tuple(float(q) for q in args.quotas.split(","))
    if args.n_categories is not None:
        overrides["n_categories"] = args.n_categories
    if args.node_budget is not None:
        overrides["node_budget"] = args.node_budget
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    if getattr(args, "no_oracle", False):
        overrides["oracle_rows"] = False
    if overrides:
        spec = replace(spec, **overrides)
    spec.validate()
    return spec


def cmd_sweep(args) -> int:
    spec = _spec_from_args(args)
    rows = run_sweep(spec)
    print(f"wrote {len(rows)} rows to {spec.output_dir}/sweep.csv")
    with open(f"{spec.output_dir}/summary.txt", "r", encoding="utf-8") as fh:
        print(fh.read(), end="")
    return 0


def cmd_act_series(args) -> int:
    spec = _spec_from_args(args)
    series = run_act_series(spec, policy_name=args.policy,
                            quota_fraction=args.quota_fraction)
    print(f"wrote {len(series)} decisions to {spec.output_dir}/act_series.csv")
    if series:
        acts = [a for _, a, _ in series]
        print(f"act range [{min(acts)}, {max(acts)}], final {acts[-1]}")
    return 0


def cmd_sensitivity(args) -> int:
    spec = _spec_from_args(args)
    quotas = tuple(float(q) for q in args.quota_fractions.split(","))
    rows = run_sensitivity(spec, preset=args.preset, quota_fractions=quotas)
    name = "sensitivity_hyper.csv" if args.preset == "hyper" else "sensitivity_n.csv"
    print(f"wrote {len(rows)} rows to {spec.output_dir}/{name}")
    for q, (lo, hi) in sorted(sensitivity_band(rows).items()):
        print(f"quota {q:g}: adaptive-ranking tco savings band [{lo:.4f}%, {hi:.4f}%]")
    return 0


def cmd_report(args) -> int:
    print(build_report(args.results_dir), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tierlab",
        description="Trace-driven SSD/HDD tiering laboratory.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic trace")
    p.add_argument("--out", required=True)
    p.add_argument("--duration", type=float, default=None,
                   help="trace length in seconds (default 3 days)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="generator config JSON instead of the default mix")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("validate", help="check a trace file")
    p.add_argument("trace")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("rates", help="cost-rate table operations")
    p.add_argument("action", choices=["show"])
    p.add_argument("--rates", help="rates JSON (defaults built in)")
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser("label", help="build a labeled training set from a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rates")
    p.add_argument("--n-categories", type=int, default=DEFAULT_N_CATEGORIES)
    p.add_argument("--boundaries", help="reuse category boundaries from this JSON")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", help="train the category model")
    p.add_argument("--labeled", required=True, help="labeled CSV from `label`")
    p.add_argument("--out", required=True)
    p.add_argument("--trees", type=int, default=300)
    p.add_argument("--depth", type=int, default=6)
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--bins", type=int, default=64)
    p.add_argument("--validation-fraction", type=float, default=0.1)
    p.add_argument("--early-stopping", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lifetime-out", help="also fit the lifetime predictor here")
    p.add_argument("--trace", help="trace for --lifetime-out lifetimes")
    p.add_argument("--rates")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("model-info", help="describe a saved model")
    p.add_argument("model")
    p.set_defaults(func=cmd_model_info)

    p = sub.add_parser("importance", help="feature-group importance by ablation")
    p.add_argument("--labeled", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_importance)

    p = sub.add_parser("simulate", help="run one policy over a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--rates")
    p.add_argument("--policy", required=True, choices=POLICY_CHOICES)
    p.add_argument("--quota", type=float, required=True, help="SSD quota in bytes (inf allowed)")
    p.add_argument("--footprint", choices=[CONSTANT, LINEAR_GROWTH], default=CONSTANT)
    p.add_argument("--growth-fraction", type=float, default=0.5)
    p.add_argument("--model", help="trained category model for adaptive-ranking")
    p.add_argument("--labeled", help="labeled CSV for adaptive-ranking-true")
    p.add_argument("--lifetime-model", help="lifetime predictor for --policy lifetime")
    p.add_argument("--placements", help="solution CSV for --policy oracle-replay")
    p.add_argument("--n-categories", type=int, default=DEFAULT_N_CATEGORIES)
    p.add_argument("--act-range", help="spillover tolerance band LOW,HIGH steering the threshold")
    p.add_argument("--tw", type=float, default=DEFAULT_LOOKBACK,
                   help="spillover look-back window, seconds")
    p.add_argument("--tl", type=float, default=DEFAULT_DECISION_INTERVAL,
                   help="decision interval, seconds")
    p.add_argument("--ttl", type=float, default=DEFAULT_TTL)
    p.add_argument("--rebuild-interval", type=float, default=DEFAULT_REBUILD_INTERVAL)
    p.add_argument("--out-jobs", help="per-job CSV")
    p.add_argument("--out-summary", help="summary CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("oracle", help="clairvoyant placement bound")
    p.add_argument("--trace", required=True)
    p.add_argument("--rates")
    p.add_argument("--objective", choices=["tco", "tcio"], default="tco")
    p.add_argument("--quota", type=float, required=True, help="SSD quota in bytes")
    p.add_argument("--budget", type=float, default=None, help="time budget, seconds")
    p.add_argument("--node-budget", type=int, default=DEFAULT_NODE_BUDGET)
    p.add_argument("--out-instance")
    p.add_argument("--out-solution")
    p.set_defaults(func=cmd_oracle)

    def add_spec_args(p):
        p.add_argument("--spec", help="experiment spec JSON")
        p.add_argument("--out", help="output directory (overrides the spec)")
        p.add_argument("--duration", type=float, default=None)
        p.add_argument("--seeds", help="comma-separated seed list")
        p.add_argument("--quotas", help="comma-separated quota fractions")
        p.add_argument("--n-categories", type=int, default=None)
        p.add_argument("--node-budget", type=int, default=None)
        p.add_argument("--jobs", type=int, default=None, help="parallel sub-runs")

    p = sub.add_parser("sweep", help="policy x quota x seed grid")
    add_spec_args(p)
    p.add_argument("--no-oracle", action="store_true", dest="no_oracle",
                   help="skip the clairvoyant rows")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("act-series", help="threshold trajectory of one adaptive run")
    add_spec_args(p)
    p.add_argument("--policy", default="adaptive-ranking")
    p.add_argument("--quota-fraction", type=float, default=0.1)
    p.set_defaults(func=cmd_act_series)

    p = sub.add_parser("sensitivity", help="hyperparameter or category-count grid")
    add_spec_args(p)
    p.add_argument("--preset", choices=["hyper", "n"], default="hyper")
    p.add_argument("--quota-fractions", default="0.1")
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("report", help="rank policies from sweep outputs")
    p.add_argument("results_dir")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SpecError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (TraceError, ValueError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except SubRunError as e:
        print(f"sub-run failed: {e}", file=sys.stderr)
        return 3
    except (InvariantViolation, AssertionError) as e:
        print(f"invariant violation: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
