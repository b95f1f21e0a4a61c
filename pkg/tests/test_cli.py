import csv
import logging
from pathlib import Path

import numpy as np
import pytest

from trackdeg import io
from trackdeg.cli import build_parser, main

FIX = Path(__file__).parent / "fixtures"
PIPE = str(FIX / "pipeline.ini")
SIM = str(FIX / "simulate.ini")


def run(*argv):
    return main([str(a) for a in argv])


def table(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def files(d):
    return {p.name: p.read_bytes() for p in sorted(Path(d).rglob("*")) if p.is_file()}


# --- ingest --------------------------------------------------------------


def test_ingest_fixture(tmp_path):
    assert run("ingest", FIX / "sample_raw.csv", "--config", PIPE, "--out", tmp_path) == 0
    ds = io.read_series(tmp_path / "series.csv")
    # 250 m in 100 m segments -> 3 segments, 3 inspections each
    assert [s.segment_id for s in ds] == [0, 1, 2]
    assert sum(s.n_obs for s in ds) == 9
    assert len((tmp_path / "series.csv").read_text().splitlines()) == 10
    summary = {r["channel"]: r for r in table(tmp_path / "ingest_summary.csv")}
    assert summary["top_r"]["dropped_nan"] == "1"
    assert int(summary["top_l"]["samples"]) == 3000


def test_ingest_bad_files(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("when,what\n1,2\n")
    assert run("ingest", bad, "--out", tmp_path / "o") == 2
    assert "missing header" in capsys.readouterr().err
    bad.write_text("")
    assert run("ingest", bad, "--out", tmp_path / "o") == 2
    assert not (tmp_path / "o").exists()
    assert run("ingest", tmp_path / "nope.csv", "--out", tmp_path / "o") == 1


# --- identify ------------------------------------------------------------


def test_identify_one_drop(tmp_path):
    assert run("identify", FIX / "one_drop.csv", "--config", PIPE, "--out", tmp_path) == 0
    rows = table(tmp_path / "flagged_intervals.csv")
    assert [(r["segment_id"], r["k"]) for r in rows] == [("1", "3")]
    first = (tmp_path / "series_flagged.csv").read_bytes()
    again = tmp_path / "again"
    assert run("identify", tmp_path / "series_flagged.csv", "--config", PIPE, "--out", again) == 0
    assert (again / "series_flagged.csv").read_bytes() == first


def test_identify_matches_truth(tmp_path):
    cfg = tmp_path / "sim.ini"
    cfg.write_text(Path(SIM).read_text().replace("tamping_schedule = 3, 7", "tamping_schedule = 5"))
    assert run("simulate", "--config", cfg, "--out", tmp_path) == 0
    assert run("identify", tmp_path / "series.csv", "--config", cfg, "--out", tmp_path,
               "--work-orders", tmp_path / "work_orders.csv") == 0
    truth = {k for k in io.read_truth(tmp_path / "truth.csv") if k.startswith("maint[")}
    got = {f"maint[{r['segment_id']}][{r['k']}]" for r in table(tmp_path / "flagged_intervals.csv")}
    assert got == truth and len(truth) == 8
    rep = {r["quantity"]: int(r["count"]) for r in table(tmp_path / "identification_report.csv")}
    assert rep["matches"] == 8 and rep["geometry_only"] == rep["workorder_only"] == 0


# --- fit -----------------------------------------------------------------


def _small_fit_config(tmp_path, n=150):
    cfg = tmp_path / "small.ini"
    cfg.write_text(Path(SIM).read_text().replace("n_warmup = 2000", f"n_warmup = {n}")
                   .replace("n_draws = 2000", f"n_draws = {n}"))
    return cfg


def test_fit_byte_identical(tmp_path):
    cfg = _small_fit_config(tmp_path)
    assert run("simulate", "--config", cfg, "--out", tmp_path) == 0
    assert run("identify", tmp_path / "series.csv", "--config", cfg, "--out", tmp_path) == 0
    outs = []
    for name in ("a", "b"):
        code = run("fit", tmp_path / "series_flagged.csv", "--config", cfg,
                   "--out", tmp_path / name, "--force")
        assert code == 0
        outs.append(files(tmp_path / name))
    assert outs[0] == outs[1]
    diag = table(tmp_path / "a" / "diagnostics.csv")
    lines = (tmp_path / "a" / "posterior.csv").read_text().splitlines()
    header = next(ln for ln in lines if not ln.startswith("#")).split(",")
    params = [c for c in header if c not in ("chain", "draw")]
    assert [r["parameter"] for r in diag] == params
    assert all(r["split_rhat"] for r in diag)


def test_fit_underiterated_exits_3(tmp_path, caplog):
    assert run("simulate", "--config", SIM, "--out", tmp_path) == 0
    series = tmp_path / "series.csv"
    cfg = str(FIX / "underfit.ini")
    assert run("fit", series, "--config", cfg, "--out", tmp_path / "x") == 3
    assert (tmp_path / "x" / "diagnostics.csv").exists()
    with caplog.at_level(logging.WARNING, logger="trackdeg"):
        assert run("fit", series, "--config", cfg, "--out", tmp_path / "y", "--force") == 0
    assert "not converged" in caplog.text


# --- predict / hit / compare / simulate ------------------------------------


def test_hit_drift_only(tmp_path):
    args = ("hit", FIX / "drift_series.csv", FIX / "drift_posterior.csv", "--config", PIPE)
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--out", tmp_path / "b") == 0
    assert files(tmp_path / "a") == files(tmp_path / "b")
    (row,) = table(tmp_path / "a" / "hit_summary.csv")
    # last state (3.7, 7.4); drift (0.01, 0.02)/day; limits 12 -> 830 and 230 days
    assert row["status"] == "ok" and float(row["censored_fraction"]) == 0.0
    assert float(row["median"]) == pytest.approx(230.0, abs=1e-3)
    first = {r["indicator"]: r for r in table(tmp_path / "a" / "first_hit.csv")}
    assert float(first["top_r"]["probability"]) == 1.0
    assert float(first["censored"]["fraction_of_paths"]) == 0.0


def test_predict_drift_only(tmp_path):
    assert run("predict", FIX / "drift_series.csv", FIX / "drift_posterior.csv",
               "--config", PIPE, "--out", tmp_path) == 0
    rows = table(tmp_path / "bands.csv")
    med = [r for r in rows if r["indicator"] == "top_l" and float(r["quantile"]) == 0.5]
    assert len(med) == 8
    # 90 days after the last inspection: 3.7 + 0.9
    assert float(med[0]["value"]) == pytest.approx(4.6, abs=1e-6)


def test_hit_exceeded_segment(tmp_path):
    cfg = tmp_path / "low.ini"
    cfg.write_text(Path(PIPE).read_text().replace("limits = 12, 12", "limits = 5, 5"))
    assert run("hit", FIX / "drift_series.csv", FIX / "drift_posterior.csv", "--config", cfg,
               "--out", tmp_path) == 0
    assert table(tmp_path / "hit_summary.csv")[0]["status"] == "exceeded"


@pytest.fixture(scope="module")
def correlated_study(tmp_path_factory):
    d = tmp_path_factory.mktemp("study")
    assert run("simulate", "--config", SIM, "--out", d) == 0
    assert run("identify", d / "series.csv", "--config", SIM, "--out", d) == 0
    for kind in ("multivariate", "univariate"):
        assert run("fit", d / "series_flagged.csv", "--config", SIM, "--model", kind,
                   "--out", d / kind) == 0
    return d


def test_compare_records_ordering(correlated_study, tmp_path):
    d = correlated_study
    assert run("compare", d / "series_flagged.csv", d / "multivariate" / "posterior.csv",
               d / "univariate" / "posterior.csv", "--config", SIM, "--out", tmp_path) == 0
    rows = table(tmp_path / "comparison_summary.csv")
    assert len(rows) == 8
    for r in rows:
        if r["status"] == "ok":
            assert r["uni_le_multi"] == str(int(float(r["median_univariate"]) <= float(r["median_multivariate"])))
    assert len(table(tmp_path / "comparison.csv")) == 5 * sum(r["status"] == "ok" for r in rows)


def test_validate_and_predict_on_study(correlated_study, tmp_path):
    d = correlated_study
    post = d / "multivariate" / "posterior.csv"
    assert run("validate", d / "series_flagged.csv", post, "--config", SIM, "--holdout", "2",
               "--out", tmp_path, "--force") == 0
    summary = {r["indicator"]: float(r["coverage"]) for r in table(tmp_path / "validation_summary.csv")}
    assert 0.0 <= summary["overall"] <= 1.0
    assert len(table(tmp_path / "validation.csv")) == 8 * 2 * 2


def test_simulate_writes_files(tmp_path):
    assert run("simulate", "--config", SIM, "--out", tmp_path) == 0
    assert {"series.csv", "truth.csv", "work_orders.csv"} <= set(files(tmp_path))
    ds = io.read_series(tmp_path / "series.csv")
    assert len(ds) == 8 and all(s.maint_flags is None for s in ds)
    assert run("simulate", "--config", SIM, "--out", tmp_path / "again") == 0
    assert files(tmp_path / "again") == files(tmp_path)
    assert run("simulate", "--config", SIM, "--seed", "12", "--out", tmp_path / "other") == 0
    assert files(tmp_path / "other")["series.csv"] != files(tmp_path)["series.csv"]


# --- plumbing --------------------------------------------------------------


def test_help_documents_flags(capsys):
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices
    assert set(sub) == {"ingest", "identify", "fit", "validate", "predict", "hit", "compare", "simulate"}
    for name, p in sub.items():
        text = p.format_help()
        for flag in ("--config", "--seed", "--threads", "--out", "--force"):
            assert flag in text, (name, flag)
        for action in p._actions:
            if action.option_strings and action.dest != "help":
                assert action.help, (name, action.dest)


def test_unknown_flag_and_bad_seed():
    with pytest.raises(SystemExit) as e:
        main(["simulate", "--bogus"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        main(["simulate", "--seed", "-1"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        main(["--help"])
    assert e.value.code == 0


def test_config_errors_have_line_numbers(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[general]\nseed = 1\n\n[fit]\nn_chains = two\n")
    out = tmp_path / "out"
    assert run("simulate", "--config", cfg, "--out", out) == 1
    assert "bad.ini:5" in capsys.readouterr().err
    cfg.write_text("[general]\nseed = 1\n[nonsense]\nx = 1\n")
    assert run("simulate", "--config", cfg, "--out", out) == 1
    assert "bad.ini:3" in capsys.readouterr().err
    cfg.write_text("[fit]\nn_chains = 1\n")
    assert run("fit", FIX / "one_drop.csv", "--config", cfg, "--out", out) == 1
    assert not out.exists()
    assert run("simulate", "--config", tmp_path / "missing.ini", "--out", out) == 1
    assert not out.exists()


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("TRACKDEG_OUT", str(tmp_path / "env"))
    assert run("simulate", "--config", SIM) == 0
    assert (tmp_path / "env" / "series.csv").exists()
    assert run("simulate", "--config", SIM, "--out", tmp_path / "flag") == 0
    assert (tmp_path / "flag" / "series.csv").exists()


def test_every_stage_deterministic(correlated_study, tmp_path):
    d = correlated_study
    multi, uni = d / "multivariate" / "posterior.csv", d / "univariate" / "posterior.csv"
    series = d / "series_flagged.csv"
    stages = [
        ("ingest", FIX / "sample_raw.csv", "--config", PIPE),
        ("identify", d / "series.csv", "--config", SIM),
        ("validate", series, multi, "--config", SIM, "--force"),
        ("predict", series, multi, "--config", SIM),
        ("hit", series, multi, "--config", SIM),
        ("compare", series, multi, uni, "--config", SIM),
        ("simulate", "--config", SIM),
    ]
    for st in stages:
        assert run(*st, "--out", tmp_path / st[0] / "1") == 0
        assert run(*st, "--out", tmp_path / st[0] / "2") == 0
        assert files(tmp_path / st[0] / "1") == files(tmp_path / st[0] / "2"), st[0]
    np.testing.assert_equal(len(files(tmp_path / "hit" / "1")), 3)
