"""Command-line front end, driven in-process through main()."""

import csv
import json

import pytest

from tierlab.cli import main
from tierlab.experiment import SWEEP_COLUMNS


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A small end-to-end artifact chain built once through the CLI."""
    d = tmp_path_factory.mktemp("cli")
    paths = {
        "trace": str(d / "trace.jsonl"),
        "labeled": str(d / "labeled.csv"),
        "model": str(d / "model.json"),
        "lifetime": str(d / "lifetime.json"),
        "solution": str(d / "solution.csv"),
        "dir": d,
    }
    assert main(["generate", "--out", paths["trace"],
                 "--duration", "10800", "--seed", "11"]) == 0
    assert main(["label", "--trace", paths["trace"], "--out", paths["labeled"],
                 "--n-categories", "8"]) == 0
    assert main(["train", "--labeled", paths["labeled"], "--out", paths["model"],
                 "--trees", "40", "--depth", "3",
                 "--lifetime-out", paths["lifetime"], "--trace", paths["trace"]]) == 0
    assert main(["oracle", "--trace", paths["trace"], "--quota", "2e9",
                 "--out-solution", paths["solution"]]) == 0
    return paths


def test_validate_accepts_the_generated_trace(workdir, capsys):
    assert main(["validate", workdir["trace"]]) == 0
    assert "ok" in capsys.readouterr().out


def test_label_writes_boundaries_sidecar(workdir):
    assert (workdir["dir"] / "labeled.boundaries.json").exists()
    with open(workdir["labeled"]) as fh:
        header = fh.readline()
    assert header.startswith("job_id,category,")


def test_rates_show_prints_the_table(capsys):
    assert main(["rates", "show"]) == 0
    table = json.loads(capsys.readouterr().out)
    assert "byte_cost_hdd" in table and "hdd_iops_capacity" in table


def test_model_info_for_both_formats(workdir, capsys):
    assert main(["model-info", workdir["model"]]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["n_categories"] == 8
    assert main(["model-info", workdir["lifetime"]]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["format"] == "tierlab-lifetime"
    assert info["sigma_global"] > 0.0


def test_importance_prints_group_columns(workdir, capsys):
    assert main(["importance", "--labeled", workdir["labeled"]]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "category,A,B,C,T"


def test_simulate_adaptive_with_outputs(workdir, capsys):
    out_jobs = str(workdir["dir"] / "jobs.csv")
    out_summary = str(workdir["dir"] / "run_summary.csv")
    rc = main(["simulate", "--trace", workdir["trace"],
               "--policy", "adaptive-ranking", "--model", workdir["model"],
               "--quota", "2e9",
               "--out-jobs", out_jobs, "--out-summary", out_summary])
    assert rc == 0
    assert "tco savings" in capsys.readouterr().out
    with open(out_jobs, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and set(rows[0]) >= {"job_id", "scheduled_device", "ssd_fraction"}
    with open(out_summary, newline="") as fh:
        summary = {r["key"]: r["value"] for r in csv.DictReader(fh)}
    assert summary["policy"] == "adaptive-ranking"


def test_simulate_lifetime_policy(workdir):
    assert main(["simulate", "--trace", workdir["trace"], "--policy", "lifetime",
                 "--lifetime-model", workdir["lifetime"], "--quota", "2e9"]) == 0


def test_oracle_solution_replays(workdir, capsys):
    rc = main(["simulate", "--trace", workdir["trace"], "--policy", "oracle-replay",
               "--placements", workdir["solution"], "--quota", "inf"])
    assert rc == 0
    assert "policy=oracle-replay" in capsys.readouterr().out


def test_sweep_and_report_via_flags(workdir, capsys):
    out = str(workdir["dir"] / "sweep_out")
    rc = main(["sweep", "--out", out, "--duration", "10800",
               "--seeds", "11", "--quotas", "0.1", "--no-oracle"])
    assert rc == 0
    assert "wrote 6 rows" in capsys.readouterr().out
    assert main(["report", out]) == 0
    assert "best learned" in capsys.readouterr().out


def test_act_series_command(workdir, capsys):
    out = str(workdir["dir"] / "act_out")
    rc = main(["act-series", "--out", out, "--duration", "10800",
               "--seeds", "11", "--quota-fraction", "0.01"])
    assert rc == 0
    assert "decisions" in capsys.readouterr().out


def test_sensitivity_command(workdir, capsys):
    out = str(workdir["dir"] / "sens_out")
    rc = main(["sensitivity", "--out", out, "--duration", "10800",
               "--seeds", "11", "--preset", "hyper"])
    assert rc == 0
    assert "adaptive-ranking tco savings band" in capsys.readouterr().out


# --- exit codes -----------------------------------------------------------


def test_bad_spec_file_exits_2(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"output_dir": "o", "budget": 3}))
    assert main(["sweep", "--spec", str(spec)]) == 2


def test_missing_trace_exits_2(tmp_path):
    assert main(["validate", str(tmp_path / "nope.jsonl")]) == 2


def test_corrupt_trace_exits_2(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"format": "wrong"}\n')
    assert main(["validate", str(bad)]) == 2


def test_simulate_without_model_exits_2(workdir):
    assert main(["simulate", "--trace", workdir["trace"],
                 "--policy", "adaptive-ranking", "--quota", "1e9"]) == 2


def test_malformed_act_range_exits_2(workdir):
    assert main(["simulate", "--trace", workdir["trace"], "--policy", "adaptive-hash",
                 "--quota", "1e9", "--act-range", "0.5"]) == 2


def test_dominance_breach_exits_4(tmp_path):
    row = {c: "" for c in SWEEP_COLUMNS}
    rows = [
        dict(row, policy="oracle-tco", seed="1", quota_fraction="0.1",
             oracle_value="5.0", tco_saved="5.0", tco_savings_pct="1.000000"),
        dict(row, policy="firstfit", seed="1", quota_fraction="0.1",
             tco_saved="6.0", tco_savings_pct="1.000000"),
    ]
    with open(tmp_path / "sweep.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(SWEEP_COLUMNS), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    assert main(["report", str(tmp_path)]) == 4


def test_sub_run_failure_exits_3(tmp_path, monkeypatch):
    import tierlab.experiment as experiment

    real = experiment.sim_run

    def flaky(trace, policy, config, features=None):
        if getattr(policy, "name", "").startswith("adaptive"):
            raise RuntimeError("boom")
        return real(trace, policy, config, features=features)

    monkeypatch.setattr(experiment, "sim_run", flaky)
    rc = main(["act-series", "--out", str(tmp_path / "o"),
               "--duration", "10800", "--seeds", "11"])
    assert rc == 3
