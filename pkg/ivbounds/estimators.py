"""
Interval estimators for the average treatment effect.

The plug-in estimator evaluates the Balke-Pearl bounds at fitted
conditional probabilities. The Bayesian estimator samples a posterior
of the effect under one of two priors:

``identified``
    Dirichlet posteriors of the observational probabilities per cell
    and instrument arm, kept to values some strata distribution can
    produce, and a Beta-distributed position of the effect inside the
    resulting bounds. All cells share one position per draw.

``strata``
    A Dirichlet prior on per-cell strata distributions, sampled by data
    augmentation: every observed (z, t, y) cell is compatible with
    exactly four strata, so latent strata counts are multinomial given
    the current distribution and the distribution is Dirichlet given the
    counts.
"""

import enum
from dataclasses import dataclass
from logging import getLogger
from typing import NamedTuple, Optional

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_softmax, softmax

from .closedform import SateBounds, binarizations, instrument_violation, row_bounds, sate_bounds, threshold_grid
from .core import COMPATIBLE, EFFECTS, ESTIMATED_TOL, CondProbs, Interval, IvDataset
from .errors import DataError, NumericError
from .seeds import generator

LOG = getLogger("Estimators")

SMOOTHING = 0.5
RIDGE = 1e-3
DEFAULT_BINS = 1024
MAX_REDRAWS = 64


class ModelKind(enum.StrEnum):
    POOLED = "pooled"
    STRATIFIED = "stratified"
    LOGISTIC = "logistic"


def _cell_codes(dataset: IvDataset) -> np.ndarray:
    """Within-slice cell 2*y + t for every row."""
    if not dataset.is_binary:
        raise DataError("conditional probabilities need a binary outcome; binarize first")
    return 2 * dataset.y.astype(np.int64) + dataset.t


def _smoothed_frequencies(codes, z):
    table = np.empty(8)
    for arm in (0, 1):
        counts = np.bincount(codes[z == arm], minlength=4) + SMOOTHING
        table[4 * arm : 4 * arm + 4] = counts / counts.sum()
    return table


def _require_arms(dataset):
    for arm in (0, 1):
        if not np.any(dataset.z == arm):
            raise DataError(f"instrument arm z={arm} has no rows")


class Stratification(NamedTuple):
    """Discrete covariate cells: distinct values of ``columns``, or sign patterns."""

    columns: tuple[int, ...] = ()
    signs: bool = False

    @classmethod
    def by_sign(cls, k: int):
        return cls(tuple(range(k)), True)

    def keys(self, x: np.ndarray) -> np.ndarray:
        if not self.columns:
            return np.zeros((len(x), 0))
        if max(self.columns) >= x.shape[1]:
            raise DataError(f"stratification column {max(self.columns)} exceeds d={x.shape[1]}")
        values = x[:, list(self.columns)]
        return (values > 0).astype(float) if self.signs else values

    def assign(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Cell keys (one per cell) and each row's cell index."""
        keys = self.keys(x)
        if not keys.shape[1]:
            return np.zeros((1, 0)), np.zeros(len(x), dtype=np.int64)
        cells, index = np.unique(keys, axis=0, return_inverse=True)
        return cells, index.reshape(-1)


class CondProbModel:
    kind: ModelKind

    def predict(self, x: np.ndarray) -> CondProbs:
        raise NotImplementedError


class PooledModel(CondProbModel):
    kind = ModelKind.POOLED

    def __init__(self, table: np.ndarray):
        self.table = table

    def predict(self, x):
        return CondProbs.from_array(np.broadcast_to(self.table, (len(x), 8)))


class StratifiedModel(CondProbModel):
    kind = ModelKind.STRATIFIED

    def __init__(self, stratification, cells, pooled):
        self.stratification = stratification
        self.cells = cells
        self.pooled = pooled

    def predict(self, x):
        keys = self.stratification.keys(x)
        rows = [self.cells.get(tuple(k), self.pooled.table) for k in keys]
        return CondProbs.from_array(np.array(rows).reshape(len(x), 8))


class LogisticModel(CondProbModel):
    """Per-arm softmax regression over the four (y, t) cells."""

    kind = ModelKind.LOGISTIC

    def __init__(self, mean, scale, coefs):
        self.mean = mean
        self.scale = scale
        self.coefs = coefs

    def design(self, x):
        xs = (x - self.mean) / self.scale
        return np.hstack([np.ones((len(x), 1)), xs])

    def predict(self, x):
        design = self.design(x)
        return CondProbs.from_array(
            np.hstack([softmax(design @ self.coefs[arm], axis=1) for arm in (0, 1)])
        )


def _fit_softmax(design, codes):
    """
    Ridge-penalized softmax regression; the smoothing pseudo-counts sit
    at the covariate mean so an intercept-only fit matches the pooled
    frequencies.
    """
    n, k = design.shape
    onehot = np.eye(4)[codes]
    center = np.zeros(k)
    center[0] = 1.0
    penalty = np.full(k, RIDGE)
    penalty[0] = 0.0

    def objective(flat):
        w = flat.reshape(k, 4)
        logp = log_softmax(design @ w, axis=1)
        logp_center = log_softmax(center @ w)
        value = -(onehot * logp).sum() - SMOOTHING * logp_center.sum()
        value += 0.5 * (penalty[:, None] * w**2).sum()
        residual = np.exp(logp) - onehot
        grad = design.T @ residual
        grad += SMOOTHING * np.outer(center, 4 * np.exp(logp_center) - 1)
        grad += penalty[:, None] * w
        return value, grad.ravel()

    result = minimize(
        objective,
        np.zeros(k * 4),
        jac=True,
        method="L-BFGS-B",
        options={"gtol": 1e-10, "ftol": 1e-15, "maxiter": 2000},
    )
    if not np.all(np.isfinite(result.x)):
        raise NumericError(f"logistic fit diverged: {result.message}")
    return result.x.reshape(k, 4)


def fit_condprob_model(dataset: IvDataset, kind=ModelKind.POOLED, stratification=None) -> CondProbModel:
    kind = ModelKind(kind)
    _require_arms(dataset)
    codes = _cell_codes(dataset)
    pooled = PooledModel(_smoothed_frequencies(codes, dataset.z))

    match kind:
        case ModelKind.POOLED:
            return pooled
        case ModelKind.STRATIFIED:
            stratification = stratification or Stratification()
            keys = stratification.keys(dataset.x)
            cells = {}
            for key in {tuple(k) for k in keys}:
                member = np.all(keys == np.array(key), axis=1)
                arms = dataset.z[member]
                if np.any(arms == 0) and np.any(arms == 1):
                    cells[key] = _smoothed_frequencies(codes[member], arms)
                else:
                    LOG.debug(f"cell {key} lacks an instrument arm, using pooled frequencies")
            return StratifiedModel(stratification, cells, pooled)
        case ModelKind.LOGISTIC:
            x = dataset.x
            mean = x.mean(axis=0)
            scale = x.std(axis=0)
            scale = np.where(scale > 0, scale, 1.0)
            model = LogisticModel(mean, scale, None)
            design = model.design(x)
            model.coefs = [
                _fit_softmax(design[dataset.z == arm], codes[dataset.z == arm]) for arm in (0, 1)
            ]
            return model


def plugin_bounds(dataset: IvDataset, kind=ModelKind.POOLED, stratification=None) -> SateBounds:
    model = fit_condprob_model(dataset, kind, stratification)
    result = sate_bounds(dataset, model)
    LOG.info(f"plug-in {kind} bounds {result.interval} ({result.crossed_rows} crossed rows)")
    return result


def bin_index(w, bins=DEFAULT_BINS):
    return np.clip(np.floor(bins * (np.asarray(w) + 1) / 2).astype(np.int64), 0, bins - 1)


@dataclass(frozen=True)
class PosteriorHistogram:
    bin_mass: np.ndarray
    n_samples: int

    @classmethod
    def from_samples(cls, samples, bins=DEFAULT_BINS):
        samples = np.asarray(samples, dtype=float)
        counts = np.bincount(bin_index(samples, bins), minlength=bins)
        return cls(counts / max(len(samples), 1), len(samples))

    @property
    def bins(self) -> int:
        return len(self.bin_mass)

    @property
    def centers(self) -> np.ndarray:
        return -1 + (np.arange(self.bins) + 0.5) * 2 / self.bins

    def mean(self) -> float:
        return float(self.bin_mass @ self.centers)

    def merge(self, other):
        if self.bins != other.bins:
            raise DataError("cannot merge histograms with different binning")
        total = self.n_samples + other.n_samples
        mass = (self.bin_mass * self.n_samples + other.bin_mass * other.n_samples) / total
        return PosteriorHistogram(mass, total)

    def to_dict(self):
        return {"bins": self.bins, "n_samples": self.n_samples, "bin_mass": self.bin_mass.tolist()}


def quantile_interval(hist: PosteriorHistogram, alpha: float) -> Interval:
    if not 0 < alpha < 1:
        raise DataError(f"alpha must lie in (0, 1), got {alpha}")
    cumulative = np.cumsum(hist.bin_mass)
    eps = 1e-12
    lower = int(np.argmax(cumulative >= alpha / 2 - eps))
    upper = int(np.argmax(cumulative >= 1 - alpha / 2 - eps))
    centers = hist.centers
    return Interval(float(centers[lower]), float(centers[upper]))


class PosteriorPrior(enum.StrEnum):
    IDENTIFIED = "identified"
    STRATA = "strata"


class GibbsConfig(NamedTuple):
    prior_concentration: float = 1.0
    burn_in: int = 1000
    n_samples: int = 4000
    thinning: int = 1
    chains: int = 1
    bins: int = DEFAULT_BINS
    seed: int = 0
    prior: PosteriorPrior = PosteriorPrior.IDENTIFIED
    # Beta(a, a) prior of the effect's position inside the bounds
    position_shape: float = 0.5

    def check(self):
        if self.prior_concentration <= 0:
            raise DataError("prior concentration must be positive")
        if self.position_shape <= 0:
            raise DataError("position shape must be positive")
        try:
            PosteriorPrior(self.prior)
        except ValueError as e:
            raise DataError(f"unknown posterior prior {self.prior!r}") from e
        if self.n_samples < 1 or self.burn_in < 0 or self.thinning < 1 or self.chains < 1:
            raise DataError(f"invalid chain settings {self}")


# SCATTER[4 * cell + j, s] == 1 iff COMPATIBLE[cell, j] == s
SCATTER = np.zeros((32, 16))
SCATTER[np.arange(32), COMPATIBLE.ravel()] = 1.0


def cell_counts(dataset: IvDataset, stratification=None, y=None):
    """
    Observed counts per stratification cell in the order 4*z + 2*y + t,
    plus the covariate weight of every cell.
    """
    y = dataset.y if y is None else y
    _, index = (stratification or Stratification()).assign(dataset.x)
    n_cells = int(index.max()) + 1 if len(index) else 1
    category = 4 * dataset.z + 2 * y.astype(np.int64) + dataset.t
    counts = np.zeros((n_cells, 8))
    np.add.at(counts, (index, category), 1.0)
    totals = counts.sum(axis=1)
    weights = totals / totals.sum() if totals.sum() else np.full(n_cells, 1.0 / n_cells)
    return counts, weights


def _run_chain(counts, weights, cfg: GibbsConfig, chain: int) -> np.ndarray:
    """
    One Gibbs chain over a batch of independent count tables.

    ``counts`` has shape (batch, cells, 8); returns effect draws of
    shape (n_samples, batch).
    """
    rng = generator(cfg.seed, "gibbs", chain)
    n = counts.astype(np.int64)
    shape = counts.shape[:2]
    q = np.full(shape + (16,), 1.0 / 16)
    tiny = np.finfo(float).tiny
    draws = np.empty((cfg.n_samples, shape[0]))

    kept = 0
    for sweep in range(cfg.burn_in + cfg.n_samples * cfg.thinning):
        compatible = q[..., COMPATIBLE]
        pvals = compatible / compatible.sum(axis=-1, keepdims=True)
        latent = rng.multinomial(n, pvals)
        strata_counts = latent.reshape(shape + (32,)) @ SCATTER
        g = np.maximum(rng.gamma(cfg.prior_concentration + strata_counts), tiny)
        q = g / g.sum(axis=-1, keepdims=True)

        if sweep >= cfg.burn_in and (sweep - cfg.burn_in) % cfg.thinning == 0:
            draws[kept] = (q @ EFFECTS) @ weights
            kept += 1
    return draws


def _dirichlet(rng, alpha):
    g = np.maximum(rng.gamma(alpha), np.finfo(float).tiny)
    return g / g.sum(axis=-1, keepdims=True)


def _draw_condprobs(rng, counts, concentration) -> np.ndarray:
    """
    Per-arm Dirichlet posterior draws of the observational
    probabilities, redrawing entries that violate the instrumental
    inequalities.
    """
    alpha = counts.reshape(counts.shape[:-1] + (2, 4)) + concentration
    p = _dirichlet(rng, alpha).reshape(counts.shape)
    for _ in range(MAX_REDRAWS):
        infeasible = instrument_violation(CondProbs.from_array(p)) > ESTIMATED_TOL
        if not infeasible.any():
            break
        p[infeasible] = _dirichlet(rng, alpha[infeasible]).reshape(-1, 8)
    return p


def _run_identified(counts, weights, cfg: GibbsConfig, chain: int) -> np.ndarray:
    """
    Independent draws over a batch of count tables, same shapes as
    ``_run_chain``. Burn-in and thinning do not apply.

    Entries still infeasible after the redraws count as crossed and
    take the full range [-1, 1].
    """
    rng = generator(cfg.seed, "identified", chain)
    draws = np.empty((cfg.n_samples, counts.shape[0]))
    for i in range(cfg.n_samples):
        p = _draw_condprobs(rng, counts, cfg.prior_concentration)
        bounds = row_bounds(CondProbs.from_array(p))
        lower = np.where(bounds.crossed, -1.0, bounds.lower)
        upper = np.where(bounds.crossed, 1.0, np.maximum(bounds.upper, bounds.lower))
        lower, upper = lower @ weights, upper @ weights
        position = rng.beta(cfg.position_shape, cfg.position_shape, size=len(lower))
        draws[i] = lower + position * (upper - lower)
    return draws


def _posterior_draws(batch_counts, weights, cfg: GibbsConfig) -> np.ndarray:
    cfg.check()
    run = _run_chain if PosteriorPrior(cfg.prior) == PosteriorPrior.STRATA else _run_identified
    chains = [run(batch_counts, weights, cfg, c) for c in range(cfg.chains)]
    return np.concatenate(chains, axis=0)


def gibbs_posterior(dataset: IvDataset, cfg: GibbsConfig = GibbsConfig(), stratification=None) -> PosteriorHistogram:
    if not dataset.is_binary:
        raise DataError("the Gibbs posterior needs a binary outcome; use a threshold grid")
    counts, weights = cell_counts(dataset, stratification)
    LOG.debug(f"gibbs posterior over {len(weights)} cells, {dataset.n} rows")
    draws = _posterior_draws(counts[None], weights, cfg)[:, 0]
    return PosteriorHistogram.from_samples(draws, cfg.bins)


def gibbs_threshold_posterior(
    dataset: IvDataset, cfg: GibbsConfig = GibbsConfig(), stratification=None, thresholds=16
) -> PosteriorHistogram:
    """
    Posterior for an outcome in [0, 1] through a threshold grid.

    Each distinct binarization gets its own chain (run as one batch);
    sorted draws are averaged across thresholds, so the quantiles of the
    result are the averaged per-threshold quantiles.
    """
    groups = list(binarizations(dataset.y, threshold_grid(thresholds)))
    tables = [cell_counts(dataset, stratification, y=binary) for _, binary in groups]
    batch = np.stack([counts for counts, _ in tables])
    weights = tables[0][1]
    draws = _posterior_draws(batch, weights, cfg)
    if len(groups) == 1:
        return PosteriorHistogram.from_samples(draws[:, 0], cfg.bins)
    group_weights = np.array([w for w, _ in groups])
    combined = np.sort(draws, axis=0) @ group_weights
    return PosteriorHistogram.from_samples(combined, cfg.bins)


def bayes_interval(
    dataset: IvDataset, alpha=0.01, cfg: GibbsConfig = GibbsConfig(), stratification=None, thresholds=None
):
    if dataset.is_binary:
        hist = gibbs_posterior(dataset, cfg, stratification)
    elif thresholds:
        hist = gibbs_threshold_posterior(dataset, cfg, stratification, thresholds)
    else:
        raise DataError("continuous outcome: pass a threshold grid size to use the Bayesian estimator")
    return quantile_interval(hist, alpha), hist


def default_stratification(d: int) -> Optional[Stratification]:
    """Sign cells over every covariate; granularity grows with d."""
    return Stratification.by_sign(d) if d else None
