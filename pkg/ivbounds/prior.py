"""
Random IV-consistent data-generating processes with known effects.

A draw builds a base covariate table, maps it to 16 strata logits,
recenters the logits toward a sparse Dirichlet target so the population
effect spreads over [-1, 1], and attaches an instrument propensity that
depends on the covariates alone.
"""

import enum
from dataclasses import dataclass
from logging import getLogger
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.special import expit, softmax

from .closedform import row_bounds
from .core import EFFECTS, STRATA_BITS, IvDataset, Labels, check_strata, strata_to_condprobs
from .errors import DataError, NumericError
from .seeds import generator

LOG = getLogger("Prior")

SOFTMAX_FLOOR = 1e-12
HIDDEN_WIDTH = 8


class ColumnFamily(enum.StrEnum):
    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"
    TANH = "tanh"


class RecenterSpec(NamedTuple):
    gamma: float = 0.1
    target: Optional[np.ndarray] = None


class DgpConfig(NamedTuple):
    n: int = 2048
    d_min: int = 5
    d_max: int = 10
    gamma: float = 0.1
    recenter: bool = True


@dataclass(frozen=True)
class PriorDgp:
    n: int
    d: int
    covariates: np.ndarray
    instrument_propensity: np.ndarray
    strata_probs: np.ndarray
    sate: float
    seed: int


def column_families(seed: int, d: int) -> list[ColumnFamily]:
    rng = generator(seed, "prior", "families")
    choices = list(ColumnFamily)
    return [choices[i] for i in rng.integers(len(choices), size=d)]


def _tanh_column(rng, n, d):
    noise = rng.normal(size=(n, 2 * d))
    w1 = rng.normal(scale=1 / np.sqrt(2 * d), size=(2 * d, HIDDEN_WIDTH))
    b1 = rng.normal(size=HIDDEN_WIDTH)
    w2 = rng.normal(scale=1 / np.sqrt(HIDDEN_WIDTH), size=HIDDEN_WIDTH)
    return np.tanh(noise @ w1 + b1) @ w2


def sample_base_table(seed: int, n: int, d: int) -> np.ndarray:
    if n < 1 or d < 1:
        raise DataError(f"base table needs n >= 1 and d >= 1, got {n=} {d=}")
    families = column_families(seed, d)
    table = np.empty((n, d))
    for j, family in enumerate(families):
        rng = generator(seed, "prior", "column", j)
        match family:
            case ColumnFamily.GAUSSIAN:
                table[:, j] = rng.normal(rng.normal(), rng.uniform(0.5, 2.0), size=n)
            case ColumnFamily.UNIFORM:
                low = rng.normal()
                table[:, j] = rng.uniform(low, low + rng.uniform(1.0, 4.0), size=n)
            case ColumnFamily.TANH:
                table[:, j] = _tanh_column(rng, n, d)
    return table


def standardize(x: np.ndarray) -> np.ndarray:
    sd = x.std(axis=0)
    return (x - x.mean(axis=0)) / np.where(sd > 0, sd, 1.0)


def random_instrument_function(d: int, seed: int) -> Callable[[np.ndarray], np.ndarray]:
    """A seeded random map from covariates to instrument logits."""
    rng = generator(seed, "prior", "instrument-function")
    scale = np.exp(rng.uniform(np.log(0.25), np.log(4.0)))
    w = rng.normal(scale=1 / np.sqrt(d), size=d)
    nonlinear = rng.random() < 0.5
    w1 = rng.normal(scale=1 / np.sqrt(d), size=(d, HIDDEN_WIDTH))
    w2 = rng.normal(scale=1 / np.sqrt(HIDDEN_WIDTH), size=HIDDEN_WIDTH)

    def f(x):
        xs = standardize(x)
        logits = xs @ w
        if nonlinear:
            logits = logits + np.tanh(xs @ w1) @ w2
        return scale * logits

    return f


def instrument_propensity(covariates: np.ndarray, seed: int, f=None) -> np.ndarray:
    if f is None:
        f = random_instrument_function(covariates.shape[1], seed)
    return expit(f(covariates))


def recenter_logits(g0: np.ndarray, spec: RecenterSpec, seed: int) -> np.ndarray:
    g0 = np.asarray(g0, dtype=float)
    if not np.all(np.isfinite(g0)):
        raise NumericError("strata logits must be finite")
    if spec.gamma <= 0:
        raise DataError(f"Dirichlet concentration must be positive, got {spec.gamma}")

    if spec.target is None:
        rng = generator(seed, "prior", "target")
        target = rng.dirichlet(np.full(16, spec.gamma))
    else:
        target = check_strata(spec.target, tol=1e-9)
    target = np.maximum(target, SOFTMAX_FLOOR)

    current = np.maximum(softmax(g0, axis=1), SOFTMAX_FLOOR).mean(axis=0)
    if np.any(current <= 0):
        raise NumericError("current population mean has an empty stratum")
    shift = np.log(target) - np.log(current)
    LOG.debug(f"recentering shift {np.round(shift, 3)}")
    return g0 + shift


def draw_dgp(seed: int, config: DgpConfig = DgpConfig(), target=None) -> PriorDgp:
    if config.n < 1 or not 1 <= config.d_min <= config.d_max:
        raise DataError(f"invalid prior configuration {config}")
    rng = generator(seed, "prior", "dgp")
    d = int(rng.integers(config.d_min, config.d_max + 1))

    covariates = sample_base_table(seed, config.n, d)
    xs = standardize(covariates)
    w = rng.normal(scale=1 / np.sqrt(d), size=(d, 16))
    logits = xs @ w + rng.normal(size=16)
    if config.recenter:
        logits = recenter_logits(logits, RecenterSpec(config.gamma, target), seed)
    strata_probs = softmax(logits, axis=1)

    propensity = instrument_propensity(covariates, seed)
    sate = float(np.mean(strata_probs @ EFFECTS))
    LOG.debug(f"prior draw {seed=} {d=} {sate=:.4f}")
    return PriorDgp(config.n, d, covariates, propensity, strata_probs, sate, seed)


def draw_strata(strata_probs: np.ndarray, rng) -> np.ndarray:
    cumulative = np.cumsum(strata_probs, axis=1)
    u = rng.random(len(strata_probs)) * cumulative[:, -1]
    return (u[:, None] < cumulative).argmax(axis=1)


def realize(strata: np.ndarray, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Observed treatment and outcome by consistency: t = T(z), y = Y(t)."""
    t = STRATA_BITS[strata, z]
    y = STRATA_BITS[strata, 2 + t]
    return t, y


def exact_labels(strata_probs: np.ndarray, sate: float) -> Labels:
    bounds = row_bounds(strata_to_condprobs(strata_probs))
    return Labels(sate, float(np.mean(bounds.lower)), float(np.mean(bounds.upper)))


def draw_instrument(dgp: PriorDgp, seed: int) -> np.ndarray:
    """Instrument draws from the covariate-only propensity; strata are never read."""
    rng = generator(seed, "sample", "instrument")
    return (rng.random(dgp.n) < dgp.instrument_propensity).astype(np.int64)


def sample_dataset(dgp: PriorDgp, seed: int, force_z=None) -> IvDataset:
    if force_z is None:
        z = draw_instrument(dgp, seed)
    else:
        z = np.broadcast_to(np.asarray(force_z, dtype=np.int64), (dgp.n,))
    strata = draw_strata(dgp.strata_probs, generator(seed, "sample", "strata"))
    t, y = realize(strata, z)
    return IvDataset(
        dgp.covariates,
        z,
        t,
        y.astype(float),
        labels=exact_labels(dgp.strata_probs, dgp.sate),
        seed=seed,
        provenance={"generator": "prior", "dgp_seed": dgp.seed},
        strata=dgp.strata_probs,
    )
