import json

import numpy as np
import pandas as pd
import pytest

from cli import cli
from ivbounds.estimators import PosteriorHistogram, quantile_interval
from ivbounds.rct2iv import ConversionConfig
from ivbounds.rct2iv.fixtures import synthetic_rct
from ivbounds.rct2iv.terms import PropensitySpec, Term, TermKind

SMALL = """
[gen]
n = 200
[estimate]
burn_in = 20
n_samples = 200
[eval]
seeds = 2
repeats = 1
"""


@pytest.fixture
def invoke(runner, tmp_path):
    settings = tmp_path / "settings.toml"
    settings.write_text(SMALL)

    def run(*args, out="out"):
        return runner.invoke(cli, ["--config", str(settings), "--out", str(tmp_path / out), *args])

    return run


@pytest.fixture
def trial(tmp_path):
    def write(binary=False, n=600, observed=("o0", "o1")):
        path = tmp_path / f"trial_{int(binary)}.csv"
        synthetic_rct(n, 0, binary=binary).to_csv(path, index=False)
        cfg = ConversionConfig(
            observed,
            ("u0", "u1"),
            PropensitySpec((Term(TermKind.LINEAR, (observed[-1],), 0.8),)),
            PropensitySpec((Term(TermKind.LINEAR, ("u0",), 0.8),)),
        )
        cfg_path = tmp_path / f"conversion_{int(binary)}.json"
        cfg_path.write_text(json.dumps(cfg.to_dict()))
        return path, cfg_path

    return write


def read_json(path):
    return json.loads(path.read_text())


def test_gen_binary(invoke, tmp_path):
    result = invoke("--seed", "7", "gen", "binary", "--count", "2")
    assert result.exit_code == 0, result.output
    meta = read_json(tmp_path / "out" / "binary" / "binary_0001.json")
    assert meta["n"] == 200
    assert set(meta["labels"]) == {"sate", "lower", "upper"}
    assert meta["labels"]["lower"] <= meta["labels"]["sate"] <= meta["labels"]["upper"]
    assert len(read_json(tmp_path / "out" / "binary" / "manifest.json")["datasets"]) == 2
    assert (tmp_path / "out" / "config.toml").exists()
    assert "binary_0000.csv" in result.output


def test_generation_is_reproducible(invoke, tmp_path):
    for out in ("a", "b"):
        assert invoke("--seed", "3", "gen", "prior", "--count", "2", "--n", "50", out=out).exit_code == 0
    for name in ("prior_0001.csv", "prior_0001.json", "prior_0001.strata.csv"):
        assert (tmp_path / "a" / "prior" / name).read_bytes() == (tmp_path / "b" / "prior" / name).read_bytes()


def test_gen_prior_streams_are_distinct(invoke, tmp_path):
    assert invoke("gen", "prior", "--count", "3", "--n", "50", "--d-min", "2", "--d-max", "3").exit_code == 0
    seeds = {read_json(tmp_path / "out" / "prior" / f"prior_{i:04d}.json")["seed"] for i in range(3)}
    assert len(seeds) == 3


def test_gen_calib(invoke, tmp_path):
    result = invoke("gen", "calib", "--family", "poly", "--n", "100", "--d", "3", "--binarize")
    assert result.exit_code == 0, result.output
    meta = read_json(tmp_path / "out" / "calib" / "calib_poly_0000.json")
    assert meta["provenance"]["generator"] == "calib"
    assert meta["y_scale"] is None


def test_closed_form_and_lp_bounds_agree(invoke, tmp_path):
    assert invoke("gen", "prior", "--n", "60", "--d-min", "2", "--d-max", "2").exit_code == 0
    data = tmp_path / "out" / "prior" / "prior_0000.csv"
    for method in ("closed", "lp"):
        result = invoke("bounds", "--in", str(data), "--method", method, "--report", str(tmp_path / f"{method}.json"))
        assert result.exit_code == 0, result.output
    closed, lp = read_json(tmp_path / "closed.json"), read_json(tmp_path / "lp.json")
    assert closed["source"] == "strata"
    assert lp["lower"] == pytest.approx(closed["lower"], abs=1e-8)
    assert lp["upper"] == pytest.approx(closed["upper"], abs=1e-8)
    labels = read_json(data.with_suffix(".json"))["labels"]
    assert closed["lower"] == pytest.approx(labels["lower"], abs=1e-12)


def test_convert(invoke, trial, tmp_path):
    source, cfg = trial()
    result = invoke("convert", "rct", "--in", str(source), "--preset", "custom", "--config-json", str(cfg),
                    "--beta-sweep", "0.5,4")
    assert result.exit_code == 0, result.output
    weak = read_json(tmp_path / "out" / "convert" / "custom_beta0.5.report.json")
    strong = read_json(tmp_path / "out" / "convert" / "custom_beta4.report.json")
    assert strong["rho_zt"] > weak["rho_zt"]
    assert weak["config"]["beta"] == 0.5
    assert read_json(tmp_path / "out" / "convert" / "custom_beta4.json")["y_scale"] is not None


def test_convert_reports_missing_columns(invoke, trial):
    source, cfg = trial(observed=("o0", "o9"))
    result = invoke("convert", "rct", "--in", str(source), "--preset", "custom", "--config-json", str(cfg))
    assert result.exit_code == 3
    assert "o9" in result.output


def test_custom_preset_needs_a_conversion_config(invoke, trial):
    source, _ = trial()
    assert invoke("convert", "rct", "--in", str(source), "--preset", "custom").exit_code == 2


def test_bad_settings(runner, tmp_path):
    settings = tmp_path / "bad.toml"
    settings.write_text("[gen]\nbogus = 1\n")
    result = runner.invoke(cli, ["--config", str(settings), "gen", "binary"])
    assert result.exit_code == 2
    assert "gen.bogus" in result.output


def test_bayes_interval_matches_histogram(invoke, tmp_path):
    assert invoke("gen", "binary").exit_code == 0
    data = tmp_path / "out" / "binary" / "binary_0000.csv"
    report = tmp_path / "est.json"
    result = invoke("estimate", "--in", str(data), "--method", "bayes", "--alpha", "0.1", "--report", str(report))
    assert result.exit_code == 0, result.output
    payload = read_json(report)
    stored = read_json(tmp_path / payload["histogram_file"])
    hist = PosteriorHistogram(np.array(stored["bin_mass"]), stored["n_samples"])
    interval = quantile_interval(hist, 0.1)
    assert (payload["lower"], payload["upper"]) == (interval.lower, interval.upper)
    assert payload["n_samples"] == 200


def test_estimates_on_converted_trial(invoke, trial, tmp_path):
    source, cfg = trial()
    invoke("convert", "rct", "--in", str(source), "--preset", "custom", "--config-json", str(cfg), "--beta", "2")
    data = tmp_path / "out" / "convert" / "custom_beta2.csv"

    result = invoke("estimate", "--in", str(data), "--thresholds", "8", "--report", str(tmp_path / "plugin.json"))
    assert result.exit_code == 0, result.output
    payload = read_json(tmp_path / "plugin.json")
    scale = read_json(data.with_suffix(".json"))["y_scale"]
    width = payload["upper"] - payload["lower"]
    original = payload["original_scale"]
    assert original["upper"] - original["lower"] == pytest.approx(width * (scale["max"] - scale["min"]))

    assert invoke("estimate", "--in", str(data), "--method", "bayes").exit_code == 3
    assert invoke("bounds", "--in", str(data), "--method", "lp").exit_code == 3
    result = invoke("estimate", "--in", str(data), "--method", "bayes", "--thresholds", "4", "--no-histogram")
    assert result.exit_code == 0, result.output


def test_stratification_flags_conflict(invoke, tmp_path):
    invoke("gen", "binary")
    data = tmp_path / "out" / "binary" / "binary_0000.csv"
    result = invoke("estimate", "--in", str(data), "--strata-cols", "0", "--sign-strata", "1")
    assert result.exit_code == 2


def test_eval(invoke, tmp_path):
    metrics = tmp_path / "eval.prom"
    result = invoke("eval", "--metrics-out", str(metrics))
    assert result.exit_code == 0, result.output
    report = read_json(tmp_path / "out" / "eval" / "binary.json")
    assert [row["method"] for row in report["rows"]] == ["bayes", "plugin"]
    assert len(report["records"]) == 4
    assert all(row["n_seeds"] == 2 for row in report["rows"])
    assert 'method="plugin"' in metrics.read_text()

    result = invoke("eval", "--methods", "plugin", "--format", "csv")
    assert result.exit_code == 0, result.output
    assert (tmp_path / "out" / "eval" / "binary.csv").read_text().startswith("method,")
    assert invoke("eval", "--methods", "oracle").exit_code == 2


def test_strength_sweep(invoke, trial, tmp_path):
    source, cfg = trial(binary=True, n=2000, observed=("o0", "o1"))
    result = invoke("sweep", "strength", "--in", str(source), "--preset", "custom", "--config-json", str(cfg),
                    "--betas", "0.5,4")
    assert result.exit_code == 0, result.output
    rows = read_json(tmp_path / "out" / "sweep" / "strength_custom.json")["rows"]
    assert [r["beta"] for r in rows] == [0.5, 4.0]
    assert all(r["analytic"] is not None for r in rows)


def test_calibration_and_sensitivity_sweeps(invoke, tmp_path):
    result = invoke("sweep", "calibration", "--k", "2", "--n", "150", "--d", "2")
    assert result.exit_code == 0, result.output
    points = read_json(tmp_path / "out" / "sweep" / "calibration_linear.json")["points"]
    assert len(points) == 18

    result = invoke("sweep", "sensitivity", "--k", "1", "--n-grid", "100,150", "--d-grid", "2")
    assert result.exit_code == 0, result.output
    cells = read_json(tmp_path / "out" / "sweep" / "sensitivity_linear.json")["cells"]
    assert [(c["axis"], c["value"]) for c in cells] == [("n", 100), ("n", 150), ("d", 2)]
    trends = read_json(tmp_path / "out" / "sweep" / "sensitivity_linear.json")["trends"]
    assert set(trends) == {"width_non_increasing_in_n", "width_non_decreasing_in_d", "min_coverage"}


def test_subcommands_take_seed_and_out(invoke, tmp_path):
    assert invoke("--seed", "7", "gen", "binary", out="group").exit_code == 0
    result = invoke("gen", "binary", "--seed", "7", out="sub")
    assert result.exit_code == 0, result.output
    assert invoke("--seed", "1", "gen", "binary", "--seed", "7", out="both").exit_code == 0
    expected = (tmp_path / "group" / "binary" / "binary_0000.csv").read_bytes()
    for out in ("sub", "both"):
        assert (tmp_path / out / "binary" / "binary_0000.csv").read_bytes() == expected

    mine = tmp_path / "mine"
    result = invoke("gen", "prior", "--seed", "1", "--n", "50", "--out", str(mine))
    assert result.exit_code == 0, result.output
    assert (mine / "prior" / "prior_0000.csv").exists()
    assert (mine / "config.toml").exists()
    assert not (tmp_path / "out" / "prior").exists()


def test_convert_takes_seed_and_out(invoke, trial, tmp_path):
    source, cfg = trial()
    target = tmp_path / "converted"
    result = invoke("convert", "rct", "--in", str(source), "--preset", "custom", "--config-json", str(cfg),
                    "--seed", "5", "--out", str(target))
    assert result.exit_code == 0, result.output
    assert (target / "convert" / "custom_beta1.csv").exists()


def test_plugin_takes_no_alpha(invoke, tmp_path):
    invoke("gen", "binary")
    data = tmp_path / "out" / "binary" / "binary_0000.csv"
    assert invoke("estimate", "--in", str(data), "--alpha", "0.1").exit_code == 2
    result = invoke("estimate", "--in", str(data), "--report", str(tmp_path / "plugin.json"))
    assert result.exit_code == 0, result.output
    assert "alpha" not in read_json(tmp_path / "plugin.json")

    result = invoke("estimate", "--in", str(data), "--method", "bayes", "--report", str(tmp_path / "bayes.json"))
    assert result.exit_code == 0, result.output
    payload = read_json(tmp_path / "bayes.json")
    assert payload["alpha"] == 0.01
    assert payload["prior"] == "identified"


def test_unknown_posterior_prior(runner, tmp_path):
    settings = tmp_path / "settings.toml"
    settings.write_text('[gen]\nn = 100\n[estimate]\nprior = "flat"\nn_samples = 50\n')
    base = ["--config", str(settings), "--out", str(tmp_path / "out")]
    assert runner.invoke(cli, [*base, "gen", "binary"]).exit_code == 0
    data = tmp_path / "out" / "binary" / "binary_0000.csv"
    result = runner.invoke(cli, [*base, "estimate", "--in", str(data), "--method", "bayes"])
    assert result.exit_code == 2
    assert "estimate.prior" in result.output


def test_estimate_on_raw_outcomes(invoke, tmp_path):
    rng = np.random.default_rng(3)
    n = 400
    path = tmp_path / "earnings.csv"
    pd.DataFrame(
        {
            "x_0": rng.normal(size=n),
            "z": rng.integers(0, 2, n),
            "t": rng.integers(0, 2, n),
            "y": rng.gamma(2.0, 2500.0, n).round(),
        }
    ).to_csv(path, index=False)
    report = tmp_path / "earnings.json"
    result = invoke("estimate", "--in", str(path), "--thresholds", "4", "--report", str(report))
    assert result.exit_code == 0, result.output
    payload = read_json(report)
    assert "original_scale" in payload
    assert payload["original_scale"]["upper"] > payload["upper"]
