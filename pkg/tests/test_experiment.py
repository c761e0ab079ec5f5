"""Sweep orchestration: spec parsing, row layout, dominance checks,
reports, and the sensitivity presets."""

import json
import pathlib

import pytest

from tierlab.experiment import (
    DEFAULT_QUOTA_GRID,
    DEFAULT_SEEDS,
    ORACLE_ROW_POLICIES,
    SENSITIVITY_COLUMNS,
    SWEEP_COLUMNS,
    SWEEP_POLICIES,
    ExperimentSpec,
    InvariantViolation,
    SpecError,
    SubRunError,
    build_report,
    check_dominance,
    load_sweep_rows,
    run_act_series,
    run_sensitivity,
    run_sweep,
    sensitivity_band,
    summarize_rows,
)


def tiny_spec(out, **kw):
    base = dict(output_dir=str(out), duration=10800.0, seeds=(11,),
                quota_grid=(0.1,), policies=("firstfit", "adaptive-ranking"))
    base.update(kw)
    return ExperimentSpec(**base)


# --- the default sweep (session fixture; also exercised by acceptance) ----


def test_default_sweep_has_the_full_grid(default_sweep):
    rows = default_sweep["rows"]
    assert len(rows) == len(DEFAULT_SEEDS) * len(DEFAULT_QUOTA_GRID) * (
        len(SWEEP_POLICIES) + len(ORACLE_ROW_POLICIES))
    for row in rows:
        assert tuple(row) == SWEEP_COLUMNS
    counts = {}
    for row in rows:
        counts[row["policy"]] = counts.get(row["policy"], 0) + 1
    per = len(DEFAULT_SEEDS) * len(DEFAULT_QUOTA_GRID)
    assert counts == {name: per for name in SWEEP_POLICIES + ORACLE_ROW_POLICIES}


def test_default_sweep_rows_are_sorted(default_sweep):
    order = {name: i for i, name in enumerate(SWEEP_POLICIES + ORACLE_ROW_POLICIES)}
    keys = [(int(r["seed"]), float(r["quota_fraction"]), order[r["policy"]])
            for r in default_sweep["rows"]]
    assert keys == sorted(keys)


def test_default_sweep_round_trips_through_csv(default_sweep):
    loaded = load_sweep_rows(default_sweep["dir"])
    assert loaded == default_sweep["rows"]


def test_default_sweep_oracle_rows_verify(default_sweep):
    for row in default_sweep["rows"]:
        if row["policy"] in ORACLE_ROW_POLICIES:
            assert row["oracle_status"] in ("optimal", "bounded")
            assert float(row["oracle_gap"]) >= 0.0
            assert int(row["oracle_nodes"]) >= 1
        assert 0.0 <= float(row["spillover_pct"]) <= 100.0


def test_default_sweep_dominance_is_clean(default_sweep):
    assert check_dominance(default_sweep["rows"]) == []


def test_summary_covers_every_policy_and_quota(default_sweep):
    text = summarize_rows(default_sweep["rows"])
    for name in SWEEP_POLICIES + ORACLE_ROW_POLICIES:
        assert name in text
    for q in DEFAULT_QUOTA_GRID:
        assert f"quota fraction {q:g}" in text


def test_report_confirms_dominance(default_sweep):
    text = build_report(default_sweep["dir"])
    assert "oracle dominance holds on all constant-mode rows." in text
    assert "best learned (adaptive-ranking) vs best baseline" in text
    assert (pathlib.Path(default_sweep["dir"]) / "report.txt").exists()


# --- dominance checking on synthetic rows ---------------------------------


def fake_row(policy, seed="1", quota="0.1", saved="1.0", value=""):
    row = {c: "" for c in SWEEP_COLUMNS}
    row.update(policy=policy, seed=seed, quota_fraction=quota,
               tco_saved=saved, oracle_value=value,
               tco_savings_pct="1.000000", oracle_gap="", oracle_status="")
    return row


def test_check_dominance_flags_a_breach():
    rows = [fake_row("oracle-tco", value="5.0", saved="5.0"),
            fake_row("firstfit", saved="6.0")]
    violations = check_dominance(rows)
    assert len(violations) == 1
    assert "firstfit" in violations[0]


def test_check_dominance_allows_equality():
    rows = [fake_row("oracle-tco", value="5.0", saved="5.0"),
            fake_row("firstfit", saved="5.0")]
    assert check_dominance(rows) == []


def test_report_raises_on_a_doctored_sweep(tmp_path):
    import csv

    rows = [fake_row("oracle-tco", value="5.0", saved="5.0"),
            fake_row("firstfit", saved="6.0")]
    with open(tmp_path / "sweep.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(SWEEP_COLUMNS), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    with pytest.raises(InvariantViolation):
        build_report(tmp_path)
    assert "DOMINANCE VIOLATIONS" in (tmp_path / "report.txt").read_text()


def test_load_sweep_rows_requires_the_csv(tmp_path):
    with pytest.raises(SpecError):
        load_sweep_rows(tmp_path)


# --- spec validation and parsing ------------------------------------------


@pytest.mark.parametrize("kw", [
    {"policies": ()},
    {"policies": ("warmfit",)},
    {"quota_grid": ()},
    {"quota_grid": (-0.1,)},
    {"quota_mode": "percent"},
    {"seeds": ()},
    {"n_categories": 1},
    {"footprint_model": "exponential"},
    {"node_budget": 0},
    {"jobs": 0},
    {"tolerance": (0.2, 0.1)},
    {"trace_path": "x.jsonl", "generator": "not-none"},
])
def test_spec_validation_rejects(tmp_path, kw):
    with pytest.raises(SpecError):
        tiny_spec(tmp_path, **kw).validate()


def write_spec_file(path, data):
    path.write_text(json.dumps(data))
    return path


def test_spec_file_minimal_defaults(tmp_path):
    path = write_spec_file(tmp_path / "spec.json", {"output_dir": str(tmp_path / "out")})
    spec = ExperimentSpec.from_file(path)
    assert spec.policies == SWEEP_POLICIES
    assert spec.quota_grid == DEFAULT_QUOTA_GRID
    assert spec.seeds == DEFAULT_SEEDS
    assert spec.jobs == 1


def test_spec_file_parses_fields(tmp_path):
    path = write_spec_file(tmp_path / "spec.json", {
        "output_dir": str(tmp_path / "out"),
        "policies": ["firstfit"],
        "quotas": [0.25],
        "seeds": [9],
        "tolerance": [0.02, 0.2],
        "tw": 600,
        "tl": 1200,
        "duration": 3600,
        "oracle_rows": False,
    })
    spec = ExperimentSpec.from_file(path)
    assert spec.policies == ("firstfit",)
    assert spec.quota_grid == (0.25,)
    assert spec.tolerance == (0.02, 0.2)
    assert (spec.t_w, spec.t_l) == (600.0, 1200.0)
    assert spec.oracle_rows is False


def test_spec_file_output_dir_override(tmp_path):
    path = write_spec_file(tmp_path / "spec.json", {"quotas": [0.1]})
    with pytest.raises(SpecError):
        ExperimentSpec.from_file(path)
    spec = ExperimentSpec.from_file(path, output_dir=str(tmp_path / "elsewhere"))
    assert spec.output_dir == str(tmp_path / "elsewhere")


@pytest.mark.parametrize("data", [
    {"output_dir": "o", "budget": 3},
    {"output_dir": "o", "generator": {"archetypes": [], "duration": 1.0},
     "generator_path": "g.json"},
    {"output_dir": "o", "policies": []},
])
def test_spec_file_rejects(tmp_path, data):
    path = write_spec_file(tmp_path / "spec.json", data)
    with pytest.raises(SpecError):
        ExperimentSpec.from_file(path)


def test_spec_file_rejects_malformed_json(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text("{not json")
    with pytest.raises(SpecError):
        ExperimentSpec.from_file(path)


# --- small end-to-end runs ------------------------------------------------


def test_zero_quota_rows_save_nothing(tmp_path):
    spec = tiny_spec(tmp_path / "out", quota_grid=(0.0,), policies=("firstfit",),
                     oracle_rows=False)
    rows = run_sweep(spec)
    assert len(rows) == 1
    assert rows[0]["tco_savings_pct"] == "0.000000"
    assert rows[0]["n_ssd_scheduled"] == "0"
    assert float(rows[0]["quota_bytes"]) == 0.0


def test_byte_quota_mode_passes_through(tmp_path):
    spec = tiny_spec(tmp_path / "out", quota_grid=(1e9,), quota_mode="bytes",
                     policies=("firstfit",), oracle_rows=False)
    rows = run_sweep(spec)
    assert float(rows[0]["quota_bytes"]) == 1e9
    assert 0.0 < float(rows[0]["quota_fraction"])


def test_sensitivity_hyper_grid(tmp_path):
    spec = tiny_spec(tmp_path / "out")
    rows = run_sensitivity(spec, "hyper")
    assert len(rows) == 28  # 3 tolerances x 3 windows x 3 intervals + firstfit
    assert all(tuple(r) == SENSITIVITY_COLUMNS for r in rows)
    grid = {(r["t_low"], r["t_high"], r["t_w"], r["t_l"])
            for r in rows if r["policy"] == "adaptive-ranking"}
    assert len(grid) == 27
    ref = [r for r in rows if r["policy"] == "firstfit"]
    assert len(ref) == 1 and ref[0]["t_low"] == ""
    assert (tmp_path / "out" / "sensitivity_hyper.csv").exists()

    band = sensitivity_band(rows)
    assert set(band) == {0.1}
    lo, hi = band[0.1]
    values = sorted(float(r["tco_savings_pct"])
                    for r in rows if r["policy"] == "adaptive-ranking")
    assert (lo, hi) == (values[0], values[-1])


def test_sensitivity_category_sweep(tmp_path):
    spec = tiny_spec(tmp_path / "out", policies=("adaptive-ranking",))
    rows = run_sensitivity(spec, "n")
    assert [int(r["n_categories"]) for r in rows] == [2, 5, 15, 25, 35]
    assert all(r["policy"] == "adaptive-ranking" for r in rows)
    assert all(0.0 < float(r["valid_accuracy"]) <= 1.0 for r in rows)
    assert (tmp_path / "out" / "sensitivity_n.csv").exists()


def test_sensitivity_rejects_unknown_preset(tmp_path):
    with pytest.raises(SpecError):
        run_sensitivity(tiny_spec(tmp_path / "out"), "quota")


def test_act_series_records_decisions(tmp_path):
    spec = tiny_spec(tmp_path / "out")
    series = run_act_series(spec, quota_fraction=0.01)
    assert series, "expected at least one threshold decision"
    for t, act, h in series:
        assert 1 <= act <= spec.n_categories - 1
        assert 0.0 <= h <= 1.0
    path = tmp_path / "out" / "act_series.csv"
    assert path.read_text().splitlines()[0] == "time,act,spillover"


def test_act_series_needs_an_adaptive_policy(tmp_path):
    with pytest.raises(SpecError):
        run_act_series(tiny_spec(tmp_path / "out"), policy_name="firstfit")


def test_sub_run_failures_carry_context(tmp_path, monkeypatch):
    import tierlab.experiment as experiment

    real = experiment.sim_run

    def flaky(trace, policy, config, features=None):
        if getattr(policy, "name", "").startswith("adaptive"):
            raise RuntimeError("boom")
        return real(trace, policy, config, features=features)

    monkeypatch.setattr(experiment, "sim_run", flaky)
    with pytest.raises(SubRunError, match="policy=adaptive-ranking"):
        run_act_series(tiny_spec(tmp_path / "out"))
