"""
Synthetic benchmark families.

``gen_binary_benchmark`` draws binary-outcome datasets whose exact
Balke-Pearl bounds are known; the calibration families (linear,
polynomial, deep nonlinear) draw continuous-outcome datasets whose
effect is known through the structural link functions.
"""

import enum
from logging import getLogger
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.special import expit, softmax

from .core import EFFECTS, IvDataset, Labels, build_dataset
from .errors import DataError
from .prior import draw_strata, exact_labels, realize
from .seeds import generator

LOG = getLogger("Benchmarks")

X_SQUARED_MEAN = 4 / 3  # E[X^2] for X ~ Uniform(-2, 2)
MLP_WIDTH = 16


class BinaryBenchConfig(NamedTuple):
    n: int = 2048
    d: Optional[int] = None
    seed: int = 0


class CalibFamily(enum.StrEnum):
    LINEAR = "linear"
    POLYNOMIAL = "poly"
    DEEP_NONLINEAR = "deepnl"


class CalibDgpConfig(NamedTuple):
    family: CalibFamily = CalibFamily.LINEAR
    n: int = 1024
    d: int = 5
    a: float = 2.0
    gamma_t: float = 1.0
    gamma_y: float = 1.0
    sigma_y: float = 0.5
    clip: tuple[float, float] = (0.05, 0.95)
    seed: int = 0


def _covariates(rng, n, d):
    if rng.random() < 0.5:
        return rng.normal(5.0, 1.0, size=(n, d))
    return rng.uniform(-10.0, 5.0, size=(n, d))


def _weights(rng, size):
    if rng.random() < 0.5:
        return rng.normal(1.0, 2.0, size=size)
    return rng.uniform(-2.0, 2.0, size=size)


def _noise(rng, size):
    if rng.random() < 0.5:
        return rng.normal(0.0, 1.0, size=size)
    return rng.laplace(0.0, 1.0, size=size)


def binary_benchmark_strata(cfg: BinaryBenchConfig):
    """Covariates, instrument propensity and per-row strata probabilities."""
    if cfg.n < 1:
        raise DataError(f"benchmark needs at least one row, got n={cfg.n}")
    rng = generator(cfg.seed, "binary", "structure")
    d = cfg.d if cfg.d is not None else int(rng.integers(5, 11))
    x = _covariates(rng, cfg.n, d)

    logits_z = x @ _weights(rng, d) + _noise(rng, cfg.n)
    sd = logits_z.std()
    logits_z = (logits_z - logits_z.mean()) / (sd if sd > 0 else 1.0)
    propensity = expit(logits_z)

    strata_logits = x @ _weights(rng, (d, 16)) + _noise(rng, (cfg.n, 16))
    return x, propensity, softmax(strata_logits, axis=1)


def gen_binary_benchmark(cfg: BinaryBenchConfig) -> IvDataset:
    x, propensity, strata_probs = binary_benchmark_strata(cfg)
    rng = generator(cfg.seed, "binary", "sample")
    z = (rng.random(cfg.n) < propensity).astype(np.int64)
    t, y = realize(draw_strata(strata_probs, rng), z)

    sate = float(np.mean(strata_probs @ EFFECTS))
    labels = exact_labels(strata_probs, sate)
    LOG.info(f"binary benchmark {cfg.seed=} d={x.shape[1]} {labels}")
    return IvDataset(
        x,
        z,
        t,
        y.astype(float),
        labels=labels,
        seed=cfg.seed,
        provenance={"generator": "binary"},
        strata=strata_probs,
    )


class Links(NamedTuple):
    h_t: Callable[[np.ndarray], np.ndarray]
    mu0: Callable[[np.ndarray], np.ndarray]
    mu1: Callable[[np.ndarray], np.ndarray]


def _sign(rng):
    return 1.0 if rng.random() < 0.5 else -1.0


def _mlp(rng, d):
    w1 = rng.normal(scale=1 / np.sqrt(d), size=(d, MLP_WIDTH))
    b1 = rng.normal(scale=1 / np.sqrt(d), size=MLP_WIDTH)
    w2 = rng.normal(scale=1 / np.sqrt(MLP_WIDTH), size=MLP_WIDTH)
    b2 = rng.normal(scale=1 / np.sqrt(MLP_WIDTH))
    return lambda x: np.tanh(x @ w1 + b1) @ w2 + b2


def family_links(family: CalibFamily, d: int, seed: int) -> Links:
    rng = generator(seed, "calib", "links", str(family))
    match CalibFamily(family):
        case CalibFamily.LINEAR:
            w_t = rng.normal(scale=1 / np.sqrt(d), size=d)
            w_y = rng.normal(scale=1 / np.sqrt(d), size=d)
            beta = _sign(rng) * rng.uniform(0.5, 2.0)
            return Links(
                lambda x: x @ w_t,
                lambda x: x @ w_y,
                lambda x: x @ w_y + beta,
            )
        case CalibFamily.POLYNOMIAL:
            w_t = rng.normal(scale=1 / np.sqrt(d), size=d)
            c_t = rng.normal(scale=1 / np.sqrt(d))
            w_y = rng.normal(scale=1 / np.sqrt(d), size=d)
            beta = _sign(rng) * rng.uniform(0.5, 1.5)
            kappa = _sign(rng) * rng.uniform(0.3, 0.8)
            return Links(
                lambda x: x @ w_t + c_t * (x[:, 0] ** 2 - X_SQUARED_MEAN),
                lambda x: np.sin(x @ w_y),
                lambda x: np.sin(x @ w_y) + beta + kappa * (x[:, 0] ** 2 - X_SQUARED_MEAN),
            )
        case CalibFamily.DEEP_NONLINEAR:
            return Links(_mlp(rng, d), _mlp(rng, d), _mlp(rng, d))


class CalibDraw(NamedTuple):
    x: np.ndarray
    z: np.ndarray
    u: np.ndarray
    eta: np.ndarray
    p_t: np.ndarray
    t: np.ndarray
    y: np.ndarray
    sate: float
    links: Links


def standardized_instrument(z: np.ndarray) -> np.ndarray:
    return (z - 0.5) / np.sqrt(0.25)


def calib_outcome(links: Links, cfg: CalibDgpConfig, x, t, u, eta) -> np.ndarray:
    """Outcome equation; the instrument does not enter it."""
    return np.where(t == 1, links.mu1(x), links.mu0(x)) + cfg.gamma_y * u + cfg.sigma_y * eta


def simulate_calib(cfg: CalibDgpConfig) -> CalibDraw:
    lo, hi = cfg.clip
    if not 0 < lo < hi < 1:
        raise DataError(f"propensity clip must lie inside (0, 1), got {cfg.clip}")
    links = family_links(cfg.family, cfg.d, cfg.seed)
    rng = generator(cfg.seed, "calib", "sample")
    x = rng.uniform(-2.0, 2.0, size=(cfg.n, cfg.d))
    z = (rng.random(cfg.n) < 0.5).astype(np.int64)
    u = rng.normal(size=cfg.n)
    eta = rng.normal(size=cfg.n)

    p_t = np.clip(
        expit(cfg.a * standardized_instrument(z) + links.h_t(x) + cfg.gamma_t * u), lo, hi
    )
    t = (rng.random(cfg.n) < p_t).astype(np.int64)
    y = calib_outcome(links, cfg, x, t, u, eta)
    sate = float(np.mean(links.mu1(x) - links.mu0(x)))
    return CalibDraw(x, z, u, eta, p_t, t, y, sate, links)


def gen_calib_dgp(cfg: CalibDgpConfig) -> IvDataset:
    draw = simulate_calib(cfg)
    LOG.debug(f"calibration draw {cfg.family} {cfg.seed=} sate={draw.sate:.4f}")
    return build_dataset(
        draw.x,
        draw.z,
        draw.t,
        draw.y,
        labels=Labels(draw.sate),
        rescale=True,
        seed=cfg.seed,
        provenance={"generator": "calib", "family": str(cfg.family), "sate_raw": draw.sate},
    )


def potential_outcomes(draw: CalibDraw, cfg: CalibDgpConfig) -> tuple[np.ndarray, np.ndarray]:
    zeros = np.zeros(len(draw.x), dtype=np.int64)
    return (
        calib_outcome(draw.links, cfg, draw.x, zeros, draw.u, draw.eta),
        calib_outcome(draw.links, cfg, draw.x, zeros + 1, draw.u, draw.eta),
    )


def gen_binarized_calib_dgp(cfg: CalibDgpConfig) -> IvDataset:
    """
    Calibration draw with the outcome split at its realized median.

    The label is the sample effect on the binarized outcome, computed
    from both potential outcomes at the same threshold.
    """
    draw = simulate_calib(cfg)
    threshold = float(np.median(draw.y))
    y0, y1 = potential_outcomes(draw, cfg)
    sate = float(np.mean((y1 >= threshold).astype(float) - (y0 >= threshold)))
    return IvDataset(
        draw.x,
        draw.z,
        draw.t,
        (draw.y >= threshold).astype(float),
        labels=Labels(sate),
        seed=cfg.seed,
        provenance={"generator": "calib", "family": str(cfg.family), "threshold": threshold},
    )
