import numpy as np
import pandas as pd
import pytest
from scipy.special import logit

from ivbounds.closedform import conditional_bounds
from ivbounds.core import Interval
from ivbounds.errors import ConfigError, DataError
from ivbounds.rct2iv import (
    ConversionConfig,
    RctTable,
    balance_arms,
    convert,
    expected_condprobs,
    pearson,
    propensity_preservation_check,
)
from ivbounds.rct2iv.fixtures import synthetic_nsw, synthetic_rct, synthetic_star
from ivbounds.rct2iv.jobs import jobs_config, jobs_pipeline, load_nsw
from ivbounds.rct2iv.star import birth_quarter, star_pipeline, star_snapshot
from ivbounds.rct2iv.terms import PropensitySpec, Term, TermKind


def rct_config(beta=1.0, seed=0, pt_intercept=None):
    return ConversionConfig(
        ("o0", "o1"),
        ("u0", "u1"),
        PropensitySpec((Term(TermKind.LINEAR, ("o1",), 0.8),)),
        PropensitySpec(
            (Term(TermKind.LINEAR, ("u0",), 0.8), Term(TermKind.LINEAR, ("o0",), 0.3)),
            intercept=pt_intercept,
        ),
        beta=beta,
        seed=seed,
    )


def rct_table(n, seed, **kwargs):
    return RctTable(synthetic_rct(n, seed, **kwargs))


def test_table_schema_errors():
    with pytest.raises(DataError, match="missing columns: y"):
        RctTable(pd.DataFrame({"t": [0, 1]}))
    with pytest.raises(DataError):
        RctTable(pd.DataFrame({"t": [0, 2], "y": [0.0, 1.0]}))


def test_balance_arms():
    frame = pd.DataFrame({"t": [1] * 100 + [0] * 60, "y": np.arange(160, dtype=float)})
    table = RctTable(frame)
    balanced = balance_arms(table, seed=1)
    assert balanced.arm_sizes() == (60, 60)
    assert balanced.frame["y"].tolist() == balance_arms(table, seed=1).frame["y"].tolist()
    assert balance_arms(balanced, seed=2).arm_sizes() == (60, 60)
    with pytest.raises(DataError):
        balance_arms(RctTable(pd.DataFrame({"t": [1, 1], "y": [0.0, 1.0]})), seed=0)


def test_config_validation():
    table = rct_table(200, 0)
    leaking_pz = PropensitySpec((Term(TermKind.LINEAR, ("u0",), 1.0),))
    leaking = ConversionConfig(("o0",), ("u0",), leaking_pz, PropensitySpec())
    with pytest.raises(ConfigError, match="u0"):
        leaking.check(table)
    overlap = ConversionConfig(("o0",), ("o0",), PropensitySpec(), PropensitySpec())
    with pytest.raises(ConfigError):
        overlap.check(table)
    with pytest.raises(DataError, match="nope"):
        ConversionConfig(("nope",), (), PropensitySpec(), PropensitySpec()).check(table)
    with pytest.raises(ConfigError):
        ConversionConfig.from_dict({"observed_cols": ["o0"], "strength": 2})
    with pytest.raises(ConfigError):
        Term.from_dict({"kind": "product", "columns": ["o0"], "coef": 1.0})
    with pytest.raises(ConfigError):
        PropensitySpec(clip=(0.0, 0.9)).check("pz")


def test_config_serialization():
    cfg = jobs_config(2.0, 5)
    assert ConversionConfig.from_dict(cfg.to_dict()) == cfg


def test_constant_treatment_propensity():
    n = 20_000
    table = rct_table(n, 1)
    cfg = ConversionConfig(("o0", "o1"), ("u0", "u1"), PropensitySpec(), PropensitySpec(intercept=float(logit(0.3))))
    dataset, report = convert(table, cfg)
    assert abs(report.acceptance_rate - 0.5) <= 3 * np.sqrt(0.25 / n)
    assert dataset.t.mean() == pytest.approx(0.3, abs=3 * np.sqrt(0.21 / report.n_accepted))
    assert report.intercept_t == pytest.approx(logit(0.3))


def test_no_instrument_signal_without_strength():
    dataset, report = convert(rct_table(20_000, 2), rct_config(beta=0.0, seed=2))
    assert abs(report.rho_zt) <= 4 / np.sqrt(report.n_accepted)


def test_strength_raises_correlation():
    table = rct_table(4000, 3)
    weak = convert(table, rct_config(beta=0.25, seed=3))[1]
    strong = convert(table, rct_config(beta=4.0, seed=3))[1]
    assert strong.rho_zt > weak.rho_zt + 0.2


def test_accepted_sample_keeps_the_trial_effect():
    table = rct_table(20_000, 4)
    dataset, report = convert(table, rct_config(beta=2.0, seed=4))
    assert report.pate_label == table.difference_in_means()
    frame = table.frame
    accepted = frame.iloc[report.accepted_index]
    effect = accepted["y1"] - accepted["y0"]
    t, y = table.t, table.y
    se = np.sqrt(y[t == 1].var() / (t == 1).sum() + y[t == 0].var() / (t == 0).sum() + effect.var() / len(accepted))
    assert abs(effect.mean() - report.pate_label) <= 3 * se
    assert dataset.labels.sate * (dataset.y_scale[1] - dataset.y_scale[0]) == pytest.approx(report.pate_label)


def test_calibrated_instrument_mean():
    dataset, report = convert(rct_table(2000, 5), rct_config(seed=5))
    assert dataset.z.mean() == pytest.approx(0.5, abs=0.05)
    assert np.all(np.abs(np.array(report.acceptance_by_quintile) - 0.5) <= 4 * np.sqrt(0.25 / 400))


def test_propensity_preservation():
    _, report = convert(rct_table(20_000, 6), rct_config(beta=1.5, seed=6))
    assert len(report.buckets) == 10
    for bucket in report.buckets:
        assert abs(bucket.gap) <= 4 * bucket.se
    assert report.preservation_gap == max(abs(b.gap) for b in report.buckets)


def test_preservation_check_on_known_propensities():
    rng = np.random.default_rng(0)
    p = np.full(50_000, 0.95)
    t = (rng.random(50_000) < p).astype(int)
    buckets = propensity_preservation_check(p, t)
    assert all(abs(b.rate_t - 0.95) <= 4 * b.se for b in buckets)


def test_report_serialization():
    _, report = convert(rct_table(500, 7), rct_config(seed=7))
    data = report.to_dict()
    assert "accepted_index" not in data
    assert data["balance_residual"] == 0.0
    assert len(data["buckets"]) == 10


def test_pearson_on_constant_input():
    assert pearson(np.zeros(5), np.arange(5)) == 0.0


def test_expected_probabilities_and_strength():
    table = rct_table(20_000, 8, binary=True)
    widths = []
    for beta in (0.25, 8.0):
        cfg = rct_config(beta=beta, seed=8)
        _, report = convert(table, cfg)
        p = expected_condprobs(table, cfg, report)
        assert p.slice_sums() == pytest.approx([1.0, 1.0])
        bounds = conditional_bounds(p)
        assert isinstance(bounds, Interval)
        widths.append(bounds.width)
    assert widths[1] < widths[0]


def test_expected_probabilities_need_binary_outcomes():
    table = rct_table(500, 9)
    cfg = rct_config(seed=9)
    _, report = convert(table, cfg)
    with pytest.raises(DataError):
        expected_condprobs(table, cfg, report)
    p = expected_condprobs(table, cfg, report, threshold=0.0)
    assert p.slice_sums() == pytest.approx([1.0, 1.0])


def test_jobs_pipeline():
    frame = synthetic_nsw(2000, 0)
    dataset, report = jobs_pipeline(frame, beta=2.0, seed=0)
    assert dataset.d == 6
    assert dataset.y_scale is not None
    assert report.treated_share == 0.5
    assert report.acceptance_rate == pytest.approx(0.5, abs=4 * np.sqrt(0.25 / report.n_input))


def test_jobs_schema():
    frame = synthetic_nsw(100, 1)
    with pytest.raises(DataError, match="re78"):
        load_nsw(frame.drop(columns="re78"))
    table = load_nsw(frame.rename(columns={"education": "educ"}))
    assert table.y == pytest.approx(np.log1p(frame["re78"].to_numpy()))


def test_star_snapshot():
    frame = synthetic_star(3000, 0)
    table = star_snapshot(frame, "small-vs-regular", "math")
    snapshot = table.frame
    assert set(snapshot["class_type"]) == {"small", "regular"}
    for _, scores in snapshot.groupby("entry_grade")["score"]:
        assert scores.mean() == pytest.approx(0.0, abs=1e-9)
        assert scores.std(ddof=0) == pytest.approx(1.0, abs=1e-9)
    assert set(table.t) == {0, 1}
    with pytest.raises(DataError):
        star_snapshot(frame, "small-vs-aide", "math")
    with pytest.raises(DataError, match="math1"):
        star_snapshot(frame.drop(columns="math1"), "small-vs-regular", "math")


def test_birth_quarter():
    assert birth_quarter("1979 Q3") == 3.0
    assert birth_quarter(1980.0) == 1.0
    assert birth_quarter(1980.25) == 2.0
    assert np.isnan(birth_quarter(None))


def test_star_pipeline():
    dataset, report = star_pipeline(synthetic_star(3000, 1), "aide-vs-regular", "reading", beta=2.0, seed=1)
    assert dataset.d == 8
    assert 0.0 <= dataset.y.min() and dataset.y.max() <= 1.0
    assert report.treated_share == 0.5


@pytest.mark.slow
def test_acceptance_replay():
    n = 20_000
    rate_ok = effect_ok = 0
    deciles = hits = 0
    for seed in range(50):
        table = RctTable(synthetic_rct(n, 100 + seed, heterogeneity=1.0))
        _, report = convert(table, rct_config(beta=1.0, seed=seed))
        rate_ok += abs(report.acceptance_rate - 0.5) <= 3 * np.sqrt(0.25 / n)
        accepted = table.frame.iloc[report.accepted_index]
        effect = accepted["y1"] - accepted["y0"]
        t, y = table.t, table.y
        se = np.sqrt(
            y[t == 1].var() / (t == 1).sum() + y[t == 0].var() / (t == 0).sum() + effect.var() / len(accepted)
        )
        effect_ok += abs(effect.mean() - report.pate_label) <= 3 * se
        deciles += len(report.buckets)
        hits += sum(abs(b.gap) <= 3 * b.se for b in report.buckets)
    assert rate_ok >= 47
    assert effect_ok >= 47
    assert hits >= 0.9 * deciles


def test_output_carries_observed_columns_only():
    table = rct_table(2000, 8)
    cfg = rct_config(seed=8)
    dataset, report = convert(table, cfg)
    assert dataset.d == len(cfg.observed_cols)
    accepted = table.frame.iloc[report.accepted_index]
    assert np.array_equal(dataset.x, accepted[list(cfg.observed_cols)].to_numpy(dtype=float))
    for hidden in cfg.hidden_cols:
        values = accepted[hidden].to_numpy(dtype=float)
        assert not any(np.allclose(dataset.x[:, j], values) for j in range(dataset.d))
