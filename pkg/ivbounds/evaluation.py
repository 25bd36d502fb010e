"""
Validity, informativeness and efficiency of interval estimators.

Records are aggregated per method as mean and standard error over
seeds. The sweeps (calibration, sensitivity, instrument strength) run
their cells on independent seed streams and return plain rows ready
for JSON or CSV export.
"""

import math
import statistics
import time
from dataclasses import dataclass
from logging import getLogger
from typing import Callable, NamedTuple, Optional

import numpy as np

from .benchmarks import CalibDgpConfig, CalibFamily, gen_binarized_calib_dgp, gen_calib_dgp
from .closedform import conditional_bounds, manski_width
from .core import Crossed, Interval, IvDataset
from .errors import DataError
from .estimators import PosteriorHistogram, quantile_interval
from .rct2iv import ConversionConfig, RctTable, convert, expected_condprobs
from .seeds import derive_seed, run_tasks

LOG = getLogger("Eval")

CALIBRATION_LEVELS = (
    0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7,
    0.8, 0.85, 0.9, 0.925, 0.95, 0.96, 0.975, 0.99, 0.995,
)
N_GRID = (256, 512, 1024, 2048, 4096)
D_GRID = (2, 4, 8, 16, 32)
BETA_GRID = (0.25, 0.5, 1.0, 2.0, 4.0, 8.0)
TIMING_REPEATS = 3


@dataclass(frozen=True)
class EvalRecord:
    method: str
    seed: int
    validity: int
    validity_kind: str
    norm_width: float
    time_per_1k_s: float
    interval: Interval

    def to_dict(self):
        return {
            "method": self.method,
            "seed": self.seed,
            "validity": self.validity,
            "validity_kind": self.validity_kind,
            "norm_width": self.norm_width,
            "time_per_1k_s": self.time_per_1k_s,
            **self.interval.to_dict(),
        }


class Summary(NamedTuple):
    mean: float
    ste: Optional[float]


@dataclass(frozen=True)
class AggregateRow:
    method: str
    validity: Summary
    norm_width: Summary
    time_per_1k_s: Summary
    n_seeds: int

    def to_dict(self):
        result = {"method": self.method, "n_seeds": self.n_seeds}
        for name in ("validity", "norm_width", "time_per_1k_s"):
            summary = getattr(self, name)
            result[f"{name}_mean"] = summary.mean
            result[f"{name}_ste"] = summary.ste
        return result


def validity_true_bounds(est: Interval, truth: Interval) -> int:
    return int(est.lower <= truth.lower and est.upper >= truth.upper)


def validity_label(est: Interval, label: float) -> int:
    return int(est.lower <= label <= est.upper)


def norm_width(est: Interval, y_min: float, y_max: float) -> float:
    if y_max <= y_min:
        raise DataError(f"outcome range [{y_min}, {y_max}] is empty")
    return est.width / manski_width(y_min, y_max)


def timed_run(method: Callable[[IvDataset], Interval], dataset: IvDataset, repeats=TIMING_REPEATS, warmup=True):
    """
    Run ``method`` and report (interval, seconds per 1,000 rows) as the
    median over ``repeats`` timed runs after an untimed warm-up.
    """
    if warmup:
        method(dataset)
    timings = []
    interval = None
    for _ in range(repeats):
        start = time.perf_counter()
        interval = method(dataset)
        timings.append(time.perf_counter() - start)
    return interval, statistics.median(timings) * 1000 / max(dataset.n, 1)


def evaluate(method_name, method, dataset: IvDataset, seed=0, repeats=TIMING_REPEATS) -> EvalRecord:
    interval, per_1k = timed_run(method, dataset, repeats)
    labels = dataset.labels
    if labels is None:
        raise DataError("evaluation needs a labelled dataset")
    if labels.bounds is not None:
        validity, kind = validity_true_bounds(interval, labels.bounds), "true-bounds"
    else:
        validity, kind = validity_label(interval, labels.sate), "label"
    # effects on an outcome rescaled to [0, 1] have Manski width 1
    width = norm_width(interval, 0.0, 1.0)
    return EvalRecord(method_name, seed, validity, kind, width, per_1k, interval)


def summarize(values) -> Summary:
    values = [float(v) for v in values]
    n = len(values)
    mean = math.fsum(values) / n
    if n < 2:
        return Summary(mean, None)
    variance = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return Summary(mean, math.sqrt(variance / n))


def aggregate(records) -> list[AggregateRow]:
    by_method = {}
    for record in records:
        by_method.setdefault(record.method, []).append(record)
    rows = []
    for method in sorted(by_method):
        group = sorted(by_method[method], key=lambda r: r.seed)
        rows.append(
            AggregateRow(
                method,
                summarize(sorted(r.validity for r in group)),
                summarize(sorted(r.norm_width for r in group)),
                summarize(sorted(r.time_per_1k_s for r in group)),
                len(group),
            )
        )
    return rows


class CoveragePoint(NamedTuple):
    level: float
    coverage: float
    ste: float


def coverage_at_levels(histograms, labels, levels=CALIBRATION_LEVELS) -> list[CoveragePoint]:
    points = []
    for level in levels:
        hits = [
            validity_label(quantile_interval(hist, 1 - level), label)
            for hist, label in zip(histograms, labels)
        ]
        coverage = float(np.mean(hits))
        points.append(CoveragePoint(level, coverage, float(np.sqrt(coverage * (1 - coverage) / len(hits)))))
    return points


def calibration_curve(
    estimator: Callable[[IvDataset], PosteriorHistogram],
    family=CalibFamily.LINEAR,
    levels=CALIBRATION_LEVELS,
    k=100,
    n=1024,
    d=5,
    seed=0,
    workers=1,
    binarize=True,
) -> list[CoveragePoint]:
    """
    Coverage of the label by the quantile interval at every level. With
    ``binarize`` the outcome is split at its median and the label is the
    effect on the split outcome.
    """
    draw = gen_binarized_calib_dgp if binarize else gen_calib_dgp

    def task(index):
        cfg = CalibDgpConfig(CalibFamily(family), n, d, seed=derive_seed(seed, "calibration", index, str(family)))
        dataset = draw(cfg)
        return estimator(dataset), dataset.labels.sate

    results = run_tasks(task, range(k), workers)
    points = coverage_at_levels([h for h, _ in results], [s for _, s in results], levels)
    LOG.info(f"calibration {family}: " + ", ".join(f"{p.level}:{p.coverage:.2f}" for p in points))
    return points


class SweepCell(NamedTuple):
    axis: str
    value: int
    coverage: float
    coverage_ste: float
    width: float
    width_ste: float

    def to_dict(self):
        return self._asdict()


def sensitivity_sweep(
    estimator: Callable[[IvDataset], PosteriorHistogram],
    family=CalibFamily.LINEAR,
    n_grid=N_GRID,
    d_grid=D_GRID,
    k=30,
    alpha=0.1,
    seed=0,
    workers=1,
    binarize=True,
) -> list[SweepCell]:
    if not n_grid or not d_grid:
        raise DataError("sensitivity grids must be nonempty")
    # (axis, grid value, n, d)
    cells = [("n", n, n, 5) for n in n_grid] + [("d", d, 1024, d) for d in d_grid]
    draw = gen_binarized_calib_dgp if binarize else gen_calib_dgp

    def task(item):
        (axis, value, n, d), index = item
        cfg = CalibDgpConfig(
            CalibFamily(family), n, d, seed=derive_seed(seed, "sensitivity", index, f"{family}-{axis}-{value}")
        )
        dataset = draw(cfg)
        interval = quantile_interval(estimator(dataset), alpha)
        return validity_label(interval, dataset.labels.sate), interval.width

    rows = []
    for axis, value, n, d in cells:
        results = run_tasks(task, [((axis, value, n, d), i) for i in range(k)], workers)
        coverage = summarize([c for c, _ in results])
        width = summarize([w for _, w in results])
        rows.append(SweepCell(axis, value, coverage.mean, coverage.ste or 0.0, width.mean, width.ste or 0.0))
        LOG.info(f"sensitivity {axis}={value}: coverage {coverage.mean:.2f} width {width.mean:.3f}")
    return rows


class StrengthRow(NamedTuple):
    beta: float
    rho_zt: float
    interval: Interval
    width: float
    analytic: Optional[Interval]

    def to_dict(self):
        return {
            "beta": self.beta,
            "rho_zt": self.rho_zt,
            **self.interval.to_dict(),
            "width": self.width,
            "analytic": None if self.analytic is None else self.analytic.to_dict(),
        }


def strength_sweep(
    table: RctTable,
    cfg: ConversionConfig,
    estimator: Callable[[IvDataset], Interval],
    betas=BETA_GRID,
    threshold=None,
    workers=1,
    rescale=True,
) -> list[StrengthRow]:
    """
    Convert ``table`` at every instrument strength and estimate on the
    result. With a binary outcome (or a ``threshold``) the population
    Balke-Pearl interval of the conversion is reported as well.
    """
    if not betas:
        raise DataError("beta grid must be nonempty")
    binary = threshold is not None or bool(np.all(np.isin(table.y, (0.0, 1.0))))

    def task(beta):
        beta_cfg = ConversionConfig(cfg.observed_cols, cfg.hidden_cols, cfg.pz, cfg.pt, beta, cfg.seed)
        dataset, report = convert(table, beta_cfg, rescale=rescale)
        interval = estimator(dataset)
        analytic = None
        if binary:
            bounds = conditional_bounds(expected_condprobs(table, beta_cfg, report, threshold))
            analytic = None if isinstance(bounds, Crossed) else bounds
        return StrengthRow(beta, report.rho_zt, interval, interval.width, analytic)

    rows = run_tasks(task, betas, workers)
    for row in rows:
        LOG.info(f"beta={row.beta}: rho={row.rho_zt:.3f} width={row.width:.3f}")
    return rows


def non_increasing(means, stes) -> bool:
    """Trend check on cell means allowing one standard error of slack per step."""
    return all(b <= a + max(sa, sb) for a, b, sa, sb in zip(means, means[1:], stes, stes[1:]))


def non_decreasing(means, stes) -> bool:
    return non_increasing([-m for m in means], stes)


def sensitivity_trends(cells) -> dict:
    """Width shrinking along n, growing along d, and the worst cell coverage."""
    n_cells = [c for c in cells if c.axis == "n"]
    d_cells = [c for c in cells if c.axis == "d"]
    return {
        "width_non_increasing_in_n": non_increasing([c.width for c in n_cells], [c.width_ste for c in n_cells]),
        "width_non_decreasing_in_d": non_decreasing([c.width for c in d_cells], [c.width_ste for c in d_cells]),
        "min_coverage": min(c.coverage for c in cells),
    }
