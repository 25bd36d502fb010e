import functools
import json
from dataclasses import dataclass, replace
from logging import getLogger
from pathlib import Path

import click
import pandas as pd

from conf import CONFIG, SETTINGS_ENV, dump_config, load_config, set_log_level
from ivbounds.benchmarks import (
    BinaryBenchConfig,
    CalibDgpConfig,
    CalibFamily,
    gen_binarized_calib_dgp,
    gen_binary_benchmark,
    gen_calib_dgp,
)
from ivbounds.closedform import average_row_bounds, continuous_outcome_bounds, row_bounds
from ivbounds.core import strata_to_condprobs
from ivbounds.errors import ConfigError, DataError, IvBoundsError
from ivbounds.estimators import (
    GibbsConfig,
    ModelKind,
    PosteriorPrior,
    Stratification,
    bayes_interval,
    default_stratification,
    fit_condprob_model,
    gibbs_posterior,
    plugin_bounds,
)
from ivbounds.evaluation import (
    aggregate,
    calibration_curve,
    evaluate,
    sensitivity_sweep,
    sensitivity_trends,
    strength_sweep,
)
from ivbounds.io import read_dataset, write_dataset, write_report
from ivbounds.lp import lp_row_bounds
from ivbounds.metrics import write_metrics
from ivbounds.prior import DgpConfig, draw_dgp, sample_dataset
from ivbounds.rct2iv import ConversionConfig, RctTable, balance_arms, convert
from ivbounds.rct2iv.jobs import jobs_config, load_nsw
from ivbounds.rct2iv.star import CONTRASTS, OUTCOMES, star_config, star_snapshot
from ivbounds.seeds import derive_seed, run_tasks

LOG = getLogger("Cli")

PRESETS = ("jobs", "star", "custom")
FORMATS = click.Choice(("json", "csv"))


class CommandFailed(click.ClickException):
    def __init__(self, error: IvBoundsError):
        super().__init__(str(error))
        self.exit_code = error.exit_code


def reports_errors(f):
    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except IvBoundsError as e:
            LOG.debug(f"{type(e).__name__}: {e}")
            raise CommandFailed(e) from e

    return wrapper


def run_options(f):
    """Subcommand --seed and --out; they win over the group's flags."""

    @click.option("--seed", type=int, default=None, help="global seed")
    @click.option("--out", type=click.Path(file_okay=False), default=None, help="output directory")
    @click.pass_obj
    @functools.wraps(f)
    def wrapper(run, *args, seed, out, **kwargs):
        if seed is not None:
            run.config["SEED"] = seed
        if out is not None:
            run.config["OUTPUT_DIR"] = out
            run.out = Path(out)
        return f(run, *args, **kwargs)

    return wrapper


@dataclass
class Run:
    config: dict
    out: Path

    @property
    def seed(self) -> int:
        return self.config["SEED"]

    @property
    def workers(self) -> int:
        return self.config["WORKERS"]

    def resolve(self, table, **flags):
        """Apply the flags that were given to a config table and return it."""
        section = self.config[table]
        for key, value in flags.items():
            if value is not None:
                section[key] = value
        return section

    def path(self, *parts) -> Path:
        return self.out.joinpath(*parts)

    def save_config(self):
        dump_config(self.config, self.path("config.toml"))


def _floats(text, name):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"{name} must be a comma separated list of numbers: {text!r}") from e


def _ints(text, name):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"{name} must be a comma separated list of integers: {text!r}") from e


def _stratification(strata_cols, sign_strata):
    if strata_cols and sign_strata:
        raise ConfigError("use either --strata-cols or --sign-strata")
    if strata_cols:
        return Stratification(tuple(_ints(strata_cols, "--strata-cols")))
    if sign_strata:
        return Stratification.by_sign(sign_strata)
    return None


def _gibbs_config(section, seed) -> GibbsConfig:
    try:
        prior = PosteriorPrior(section["prior"])
    except ValueError as e:
        choices = ", ".join(p.value for p in PosteriorPrior)
        raise ConfigError(f"estimate.prior must be one of {choices}, got {section['prior']!r}") from e
    return GibbsConfig(
        prior=prior,
        prior_concentration=section["prior_concentration"],
        position_shape=section["position_shape"],
        burn_in=section["burn_in"],
        n_samples=section["n_samples"],
        thinning=section["thinning"],
        chains=section["chains"],
        bins=section["bins"],
        seed=seed,
    )


def _plugin(dataset, kind, stratification, thresholds):
    if dataset.is_binary:
        return plugin_bounds(dataset, kind, stratification)
    return continuous_outcome_bounds(
        dataset, lambda d: fit_condprob_model(d, kind, stratification), thresholds
    )


def _emit_manifest(run, name, written):
    entries = []
    for path, dataset in written:
        entry = {"path": str(path), "seed": dataset.seed, "n": dataset.n, "d": dataset.d}
        if dataset.labels is not None:
            entry.update(dataset.labels.to_dict())
        entries.append(entry)
        labels = " ".join(f"{k}={v:.4f}" for k, v in entry.items() if k in ("sate", "lower", "upper"))
        click.echo(f"{path} {labels}")
    write_report({"datasets": entries}, run.path(name, "manifest.json"))


@click.group()
@click.option("--config", "config_path", envvar=SETTINGS_ENV, type=click.Path(dir_okay=False), default=None)
@click.option("--seed", type=int, default=None, help="global seed")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="output directory")
@click.option("--workers", type=int, default=None)
@click.option("--verbose", is_flag=True, default=False)
@click.pass_context
@reports_errors
def cli(ctx, config_path, seed, out, workers, verbose):
    """Partial identification of treatment effects with a binary instrument."""
    config = load_config(config_path)
    for key, value in (("SEED", seed), ("OUTPUT_DIR", out), ("WORKERS", workers)):
        if value is not None:
            config[key] = value
    CONFIG.clear()
    CONFIG.update(config)
    set_log_level("DEBUG" if verbose else CONFIG["LOG_LEVEL"])
    ctx.obj = Run(CONFIG, Path(CONFIG["OUTPUT_DIR"]))


@cli.group()
def gen():
    """Generate synthetic datasets."""


@gen.command("prior")
@click.option("--count", type=int, default=None)
@click.option("--n", type=int, default=None)
@click.option("--d-min", type=int, default=None)
@click.option("--d-max", type=int, default=None)
@click.option("--gamma", type=float, default=None)
@click.option("--recenter/--no-recenter", default=None)
@run_options
@reports_errors
def gen_prior(run, count, n, d_min, d_max, gamma, recenter):
    section = run.resolve("gen", count=count, n=n, d_min=d_min, d_max=d_max, gamma=gamma, recenter=recenter)
    cfg = DgpConfig(section["n"], section["d_min"], section["d_max"], section["gamma"], section["recenter"])

    def task(index):
        seed = derive_seed(run.seed, "gen-prior", index, "dataset")
        dataset = sample_dataset(draw_dgp(seed, cfg), seed)
        return write_dataset(dataset, run.path("prior", f"prior_{index:04d}.csv")), dataset

    _emit_manifest(run, "prior", run_tasks(task, range(section["count"]), run.workers))
    run.save_config()


@gen.command("binary")
@click.option("--count", type=int, default=None)
@click.option("--n", type=int, default=None)
@run_options
@reports_errors
def gen_binary(run, count, n):
    section = run.resolve("gen", count=count, n=n)

    def task(index):
        seed = derive_seed(run.seed, "gen-binary", index, "dataset")
        dataset = gen_binary_benchmark(BinaryBenchConfig(section["n"], seed=seed))
        return write_dataset(dataset, run.path("binary", f"binary_{index:04d}.csv")), dataset

    _emit_manifest(run, "binary", run_tasks(task, range(section["count"]), run.workers))
    run.save_config()


@gen.command("calib")
@click.option("--count", type=int, default=None)
@click.option("--family", type=click.Choice([f.value for f in CalibFamily]), default=None)
@click.option("--n", type=int, default=None)
@click.option("--d", type=int, default=None)
@click.option("--binarize", is_flag=True, default=False, help="split the outcome at its median")
@run_options
@reports_errors
def gen_calib(run, count, family, n, d, binarize):
    section = run.resolve("gen", count=count, family=family, calib_n=n, calib_d=d)
    draw = gen_binarized_calib_dgp if binarize else gen_calib_dgp

    def task(index):
        seed = derive_seed(run.seed, "gen-calib", index, section["family"])
        cfg = CalibDgpConfig(CalibFamily(section["family"]), section["calib_n"], section["calib_d"], seed=seed)
        dataset = draw(cfg)
        return write_dataset(dataset, run.path("calib", f"calib_{section['family']}_{index:04d}.csv")), dataset

    _emit_manifest(run, "calib", run_tasks(task, range(section["count"]), run.workers))
    run.save_config()


def _load_trial(source, preset, contrast, outcome, treatment_col, outcome_col) -> RctTable:
    match preset:
        case "jobs":
            return load_nsw(source)
        case "star":
            return star_snapshot(pd.read_csv(source), contrast, outcome)
        case _:
            return RctTable(pd.read_csv(source), treatment_col, outcome_col)


def _conversion_config(preset, config_json, seed) -> ConversionConfig:
    if config_json:
        try:
            data = json.loads(Path(config_json).read_text())
        except (OSError, ValueError) as e:
            raise ConfigError(f"cannot read conversion config {config_json}: {e}") from e
        return replace(ConversionConfig.from_dict(data), seed=seed)
    match preset:
        case "jobs":
            return jobs_config(1.0, seed)
        case "star":
            return star_config(1.0, seed)
    raise ConfigError("the custom preset needs --config-json")


def trial_options(f):
    for option in reversed(
        (
            click.option("--in", "source", required=True, type=click.Path(exists=True, dir_okay=False)),
            click.option("--preset", type=click.Choice(PRESETS), default=None),
            click.option("--config-json", type=click.Path(exists=True, dir_okay=False), default=None),
            click.option("--contrast", type=click.Choice(sorted(CONTRASTS)), default=None),
            click.option("--outcome", type=click.Choice(OUTCOMES), default=None),
            click.option("--treatment-col", default="t", show_default=True),
            click.option("--outcome-col", default="y", show_default=True),
        )
    ):
        f = option(f)
    return f


def _prepare_trial(run, source, preset, config_json, contrast, outcome, treatment_col, outcome_col):
    section = run.resolve("convert", preset=preset, contrast=contrast, outcome=outcome)
    preset = section["preset"]
    seed = derive_seed(run.seed, "convert", 0, preset)
    table = _load_trial(source, preset, section["contrast"], section["outcome"], treatment_col, outcome_col)
    table = balance_arms(table, seed)
    return section, table, _conversion_config(preset, config_json, seed)


@cli.group("convert")
def convert_group():
    """Turn randomized trials into IV datasets."""


@convert_group.command("rct")
@trial_options
@click.option("--beta", type=float, default=None, help="instrument strength")
@click.option("--beta-sweep", default=None, help="comma separated strengths, one output set each")
@run_options
@reports_errors
def convert_rct(run, source, preset, config_json, contrast, outcome, treatment_col, outcome_col, beta, beta_sweep):
    section, table, cfg = _prepare_trial(
        run, source, preset, config_json, contrast, outcome, treatment_col, outcome_col
    )
    section = run.resolve("convert", beta=beta)
    betas = _floats(beta_sweep, "--beta-sweep") if beta_sweep else [section["beta"]]
    if not betas:
        raise ConfigError("--beta-sweep is empty")

    for b in betas:
        dataset, report = convert(table, replace(cfg, beta=b), rescale=True)
        stem = f"{section['preset']}_beta{b:g}"
        path = write_dataset(dataset, run.path("convert", f"{stem}.csv"))
        write_report(
            {**report.to_dict(), "config": replace(cfg, beta=b).to_dict()},
            run.path("convert", f"{stem}.report.json"),
        )
        click.echo(f"{path} beta={b:g} rho_zt={report.rho_zt:.4f} accepted={report.n_accepted}/{report.n_input}")
    run.save_config()


@cli.command()
@click.option("--in", "source", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--method", type=click.Choice(("closed", "lp")), default="closed", show_default=True)
@click.option("--kind", type=click.Choice([k.value for k in ModelKind]), default=None)
@click.option("--thresholds", type=int, default=None)
@click.option("--strata-cols", default=None, help="comma separated covariate indices")
@click.option("--sign-strata", type=int, default=None, help="stratify on signs of the first k covariates")
@click.option("--format", "fmt", type=FORMATS, default="json", show_default=True)
@click.option("--report", type=click.Path(dir_okay=False), default=None)
@run_options
@reports_errors
def bounds(run, source, method, kind, thresholds, strata_cols, sign_strata, fmt, report):
    """Balke-Pearl bounds, from ground-truth strata when the dataset carries them."""
    section = run.resolve("estimate", kind=kind, thresholds=thresholds)
    dataset = read_dataset(source)
    rows_for = row_bounds if method == "closed" else lp_row_bounds

    if dataset.strata is not None:
        origin = "strata"
        result = average_row_bounds(rows_for(strata_to_condprobs(dataset.strata)))
    else:
        origin = f"fitted-{section['kind']}"
        stratification = _stratification(strata_cols, sign_strata)
        if dataset.is_binary:
            p = fit_condprob_model(dataset, section["kind"], stratification).predict(dataset.x)
            result = average_row_bounds(rows_for(p.validate()))
        elif method == "closed":
            result = _plugin(dataset, section["kind"], stratification, section["thresholds"])
        else:
            raise DataError("LP bounds need a binary outcome or ground-truth strata")

    payload = {"dataset": str(source), "method": method, "source": origin, **result.to_dict()}
    if dataset.y_scale is not None:
        payload["original_scale"] = dataset.to_original_scale(result.interval).to_dict()
    target = Path(report) if report else run.path("bounds", f"{Path(source).stem}.{method}.{fmt}")
    write_report(payload, target, fmt)
    click.echo(f"{method} bounds [{result.interval.lower:.6f}, {result.interval.upper:.6f}] -> {target}")
    run.save_config()


@cli.command()
@click.option("--in", "source", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--method", type=click.Choice(("plugin", "bayes")), default="plugin", show_default=True)
@click.option("--alpha", type=float, default=None)
@click.option("--kind", type=click.Choice([k.value for k in ModelKind]), default=None)
@click.option("--thresholds", type=int, default=None, help="threshold grid size for continuous outcomes")
@click.option("--strata-cols", default=None, help="comma separated covariate indices")
@click.option("--sign-strata", type=int, default=None, help="stratify on signs of the first k covariates")
@click.option("--samples", type=int, default=None)
@click.option("--burn-in", type=int, default=None)
@click.option("--chains", type=int, default=None)
@click.option("--histogram/--no-histogram", default=True, show_default=True)
@click.option("--format", "fmt", type=FORMATS, default="json", show_default=True)
@click.option("--report", type=click.Path(dir_okay=False), default=None)
@run_options
@reports_errors
def estimate(
    run, source, method, alpha, kind, thresholds, strata_cols, sign_strata, samples, burn_in, chains, histogram, fmt,
    report,
):
    """Interval estimate of the average treatment effect."""
    if method == "plugin" and alpha is not None:
        raise ConfigError("the plug-in interval estimates the bounds themselves and takes no --alpha")
    section = run.resolve(
        "estimate", kind=kind, n_samples=samples, burn_in=burn_in, chains=chains, bayes_alpha=alpha
    )
    dataset = read_dataset(source)
    stratification = _stratification(strata_cols, sign_strata)
    stem = Path(source).stem
    target = Path(report) if report else run.path("estimate", f"{stem}.{method}.{fmt}")
    payload = {"dataset": str(source), "method": method}

    if method == "plugin":
        result = _plugin(dataset, section["kind"], stratification, thresholds or section["thresholds"])
        interval = result.interval
        payload.update({"kind": section["kind"], **result.to_dict()})
    else:
        if not dataset.is_binary and not thresholds:
            raise DataError("the Bayesian estimator needs a binary outcome; pass --thresholds to binarize")
        cfg = _gibbs_config(section, derive_seed(run.seed, "estimate", 0, stem))
        interval, hist = bayes_interval(dataset, section["bayes_alpha"], cfg, stratification, thresholds)
        payload.update(
            {
                "alpha": section["bayes_alpha"],
                "prior": str(cfg.prior),
                **interval.to_dict(),
                "posterior_mean": hist.mean(),
                "n_samples": hist.n_samples,
            }
        )
        if histogram:
            hist_path = target.with_name(f"{stem}.histogram.json")
            write_report(hist.to_dict(), hist_path)
            payload["histogram_file"] = hist_path.name

    if dataset.y_scale is not None:
        payload["original_scale"] = dataset.to_original_scale(interval).to_dict()
    write_report(payload, target, fmt)
    click.echo(f"{method} interval [{interval.lower:.6f}, {interval.upper:.6f}] -> {target}")
    run.save_config()


def _benchmark_dataset(benchmark, seed, section):
    match benchmark:
        case "binary":
            return gen_binary_benchmark(BinaryBenchConfig(section["n"], seed=seed))
        case "prior":
            cfg = DgpConfig(section["n"], section["d_min"], section["d_max"], section["gamma"], section["recenter"])
            return sample_dataset(draw_dgp(seed, cfg), seed)
        case "calib":
            return gen_calib_dgp(
                CalibDgpConfig(CalibFamily(section["family"]), section["calib_n"], section["calib_d"], seed=seed)
            )
    raise ConfigError(f"unknown benchmark {benchmark!r}")


@cli.command("eval")
@click.option("--benchmark", type=click.Choice(("binary", "prior", "calib")), default=None)
@click.option("--seeds", type=int, default=None)
@click.option("--methods", default=None, help="comma separated subset of plugin,bayes")
@click.option("--repeats", type=int, default=None)
@click.option("--format", "fmt", type=FORMATS, default="json", show_default=True)
@click.option("--metrics-out", type=click.Path(dir_okay=False), default=None, help="prometheus textfile")
@run_options
@reports_errors
def eval_cmd(run, benchmark, seeds, methods, repeats, fmt, metrics_out):
    """Validity, normalized width and time per method over seeded benchmark draws."""
    section = run.resolve(
        "eval",
        benchmark=benchmark,
        seeds=seeds,
        methods=methods.split(",") if methods else None,
        repeats=repeats,
    )
    unknown = set(section["methods"]) - {"plugin", "bayes"}
    if unknown:
        raise ConfigError(f"unknown methods: {', '.join(sorted(unknown))}")
    est = run.config["estimate"]

    def make_methods(seed):
        return {
            "plugin": lambda ds: _plugin(ds, est["kind"], None, est["thresholds"]).interval,
            "bayes": lambda ds: bayes_interval(
                ds, est["bayes_alpha"], _gibbs_config(est, seed), None, None if ds.is_binary else est["thresholds"]
            )[0],
        }

    def task(index):
        seed = derive_seed(run.seed, "eval", index, section["benchmark"])
        dataset = _benchmark_dataset(section["benchmark"], seed, run.config["gen"])
        available = make_methods(seed)
        return [evaluate(name, available[name], dataset, seed, section["repeats"]) for name in section["methods"]]

    records = [r for batch in run_tasks(task, range(section["seeds"]), run.workers) for r in batch]
    rows = aggregate(records)
    for row in rows:
        parts = []
        for name in ("validity", "norm_width", "time_per_1k_s"):
            summary = getattr(row, name)
            ste = "n/a" if summary.ste is None else f"{summary.ste:.4f}"
            parts.append(f"{name}={summary.mean:.4f}±{ste}")
        click.echo(f"{row.method}: " + " ".join(parts))

    target = run.path("eval", f"{section['benchmark']}.{fmt}")
    write_report(
        {
            "benchmark": section["benchmark"],
            "rows": [r.to_dict() for r in rows],
            "records": [r.to_dict() for r in records],
        },
        target,
        fmt,
        rows_key="rows",
    )
    if metrics_out:
        write_metrics(metrics_out, section["benchmark"], rows)
    run.save_config()


@cli.group()
def sweep():
    """Calibration, sensitivity and instrument-strength sweeps."""


def _posterior_estimator(est):
    def estimator(dataset):
        cfg = _gibbs_config(est, dataset.seed)
        return gibbs_posterior(dataset, cfg, default_stratification(dataset.d))

    return estimator


@sweep.command("strength")
@trial_options
@click.option("--betas", default=None, help="comma separated strengths")
@click.option("--threshold", type=float, default=None, help="outcome threshold for the analytic interval")
@click.option("--format", "fmt", type=FORMATS, default="json", show_default=True)
@run_options
@reports_errors
def sweep_strength(run, source, preset, config_json, contrast, outcome, treatment_col, outcome_col, betas, threshold,
                   fmt):
    conv, table, cfg = _prepare_trial(run, source, preset, config_json, contrast, outcome, treatment_col, outcome_col)
    section = run.resolve("sweep", beta_grid=_floats(betas, "--betas") if betas else None)
    est = run.config["estimate"]
    rows = strength_sweep(
        table,
        cfg,
        lambda ds: _plugin(ds, est["kind"], None, est["thresholds"]).interval,
        section["beta_grid"],
        threshold,
        run.workers,
    )
    target = run.path("sweep", f"strength_{conv['preset']}.{fmt}")
    write_report({"rows": [r.to_dict() for r in rows]}, target, fmt, rows_key="rows")
    for row in rows:
        click.echo(f"beta={row.beta:g} rho_zt={row.rho_zt:.4f} width={row.width:.4f}")
    run.save_config()


@sweep.command("sensitivity")
@click.option("--family", type=click.Choice([f.value for f in CalibFamily]), default=None)
@click.option("--k", type=int, default=None, help="datasets per cell")
@click.option("--alpha", type=float, default=None)
@click.option("--n-grid", default=None)
@click.option("--d-grid", default=None)
@click.option("--format", "fmt", type=FORMATS, default="json", show_default=True)
@run_options
@reports_errors
def sweep_sensitivity(run, family, k, alpha, n_grid, d_grid, fmt):
    section = run.resolve(
        "sweep",
        family=family,
        sensitivity_k=k,
        alpha=alpha,
        n_grid=_ints(n_grid, "--n-grid") if n_grid else None,
        d_grid=_ints(d_grid, "--d-grid") if d_grid else None,
    )
    cells = sensitivity_sweep(
        _posterior_estimator(run.config["estimate"]),
        section["family"],
        section["n_grid"],
        section["d_grid"],
        section["sensitivity_k"],
        section["alpha"],
        run.seed,
        run.workers,
    )
    target = run.path("sweep", f"sensitivity_{section['family']}.{fmt}")
    trends = sensitivity_trends(cells)
    write_report({"cells": [c.to_dict() for c in cells], "trends": trends}, target, fmt, rows_key="cells")
    for cell in cells:
        click.echo(f"{cell.axis}={cell.value} coverage={cell.coverage:.3f} width={cell.width:.4f}")
    click.echo(" ".join(f"{k}={v}" for k, v in trends.items()))
    run.save_config()


@sweep.command("calibration")
@click.option("--family", type=click.Choice([f.value for f in CalibFamily]), default=None)
@click.option("--k", type=int, default=None, help="number of datasets")
@click.option("--n", type=int, default=None)
@click.option("--d", type=int, default=None)
@click.option("--format", "fmt", type=FORMATS, default="json", show_default=True)
@run_options
@reports_errors
def sweep_calibration(run, family, k, n, d, fmt):
    section = run.resolve("sweep", family=family, calibration_k=k)
    gen_section = run.resolve("gen", calib_n=n, calib_d=d)
    points = calibration_curve(
        _posterior_estimator(run.config["estimate"]),
        section["family"],
        section["levels"],
        section["calibration_k"],
        gen_section["calib_n"],
        gen_section["calib_d"],
        run.seed,
        run.workers,
    )
    target = run.path("sweep", f"calibration_{section['family']}.{fmt}")
    write_report({"points": [p._asdict() for p in points]}, target, fmt, rows_key="points")
    for point in points:
        click.echo(f"level={point.level} coverage={point.coverage:.3f}±{point.ste:.3f}")
    run.save_config()


if __name__ == "__main__":
    cli()
