"""
Randomized trials to confounded IV benchmarks.

Each unit of a balanced trial gets a synthetic instrument drawn from
observed covariates and a synthetic treatment drawn from observed and
hidden covariates plus the instrument. Units are kept only when the
synthetic treatment equals the randomized one. Because the randomized
arm is a fair coin independent of everything else, acceptance has
probability 1/2 for every unit, so the accepted sample keeps the
trial's average effect while its treatment follows the intended
confounded propensity.
"""

from dataclasses import dataclass
from logging import getLogger
from typing import NamedTuple, Optional

import numpy as np
import pandas as pd
from scipy.optimize import bisect, brentq
from scipy.special import expit

from ..core import CondProbs, Labels, build_dataset
from ..errors import ConfigError, DataError
from ..seeds import generator
from .terms import PropensitySpec, standardize_frame

LOG = getLogger("RctToIv")

INTERCEPT_BRACKET = (-30.0, 30.0)


@dataclass(frozen=True)
class RctTable:
    frame: pd.DataFrame
    treatment: str = "t"
    outcome: str = "y"

    def require(self, columns):
        missing = [c for c in columns if c not in self.frame.columns]
        if missing:
            raise DataError(f"missing columns: {', '.join(missing)}")

    def __post_init__(self):
        self.require([self.treatment, self.outcome])
        t = self.frame[self.treatment]
        if not t.isin((0, 1)).all():
            raise DataError(f"treatment column {self.treatment} must be binary")
        if not np.all(np.isfinite(self.frame[self.outcome].to_numpy(dtype=float))):
            raise DataError(f"outcome column {self.outcome} must be finite")

    @property
    def t(self) -> np.ndarray:
        return self.frame[self.treatment].to_numpy(dtype=np.int64)

    @property
    def y(self) -> np.ndarray:
        return self.frame[self.outcome].to_numpy(dtype=float)

    def arm_sizes(self) -> tuple[int, int]:
        t = self.t
        return int((t == 0).sum()), int((t == 1).sum())

    def difference_in_means(self) -> float:
        t, y = self.t, self.y
        return float(y[t == 1].mean() - y[t == 0].mean())

    def with_frame(self, frame):
        return RctTable(frame.reset_index(drop=True), self.treatment, self.outcome)


@dataclass(frozen=True)
class ConversionConfig:
    observed_cols: tuple[str, ...]
    hidden_cols: tuple[str, ...]
    pz: PropensitySpec
    pt: PropensitySpec
    beta: float = 1.0
    seed: int = 0

    def check(self, table: RctTable):
        overlap = set(self.observed_cols) & set(self.hidden_cols)
        if overlap:
            raise ConfigError(f"columns both observed and hidden: {', '.join(sorted(overlap))}")
        table.require(list(self.observed_cols) + list(self.hidden_cols))
        # the instrument may only see observed covariates
        leaked = self.pz.columns - set(self.observed_cols)
        if leaked:
            raise ConfigError(f"instrument propensity reads non-observed columns: {', '.join(sorted(leaked))}")
        unknown = self.pt.columns - set(self.observed_cols) - set(self.hidden_cols)
        if unknown:
            raise ConfigError(f"treatment propensity reads unknown columns: {', '.join(sorted(unknown))}")
        self.pz.check("pz")
        self.pt.check("pt")
        if not np.isfinite(self.beta):
            raise ConfigError(f"beta must be finite, got {self.beta}")

    def to_dict(self):
        return {
            "observed_cols": list(self.observed_cols),
            "hidden_cols": list(self.hidden_cols),
            "pz": self.pz.to_dict(),
            "pt": self.pt.to_dict(),
            "beta": self.beta,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data):
        known = {"observed_cols", "hidden_cols", "pz", "pt", "beta", "seed"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown conversion keys: {', '.join(sorted(unknown))}")
        try:
            return cls(
                tuple(data["observed_cols"]),
                tuple(data.get("hidden_cols", ())),
                PropensitySpec.from_dict(data.get("pz", {})),
                PropensitySpec.from_dict(data.get("pt", {})),
                float(data.get("beta", 1.0)),
                int(data.get("seed", 0)),
            )
        except KeyError as e:
            raise ConfigError(f"conversion config is missing {e}") from e


class PropensityBucket(NamedTuple):
    bucket: int
    n: int
    mean_p_t: float
    rate_t: float
    gap: float
    se: float

    def to_dict(self):
        return self._asdict()


@dataclass(frozen=True)
class ConversionReport:
    n_input: int
    n_accepted: int
    acceptance_rate: float
    rho_zt: float
    pate_label: float
    preservation_gap: float
    buckets: tuple[PropensityBucket, ...]
    acceptance_by_quintile: tuple[float, ...]
    treated_share: float
    beta: float
    intercept_z: float
    intercept_t: float
    # diagnostics kept out of the serialized report
    accepted_index: Optional[np.ndarray] = None
    accepted_p_t: Optional[np.ndarray] = None

    def to_dict(self):
        return {
            "n_input": self.n_input,
            "n_accepted": self.n_accepted,
            "acceptance_rate": self.acceptance_rate,
            "rho_zt": self.rho_zt,
            "pate_label": self.pate_label,
            "preservation_gap": self.preservation_gap,
            "buckets": [b.to_dict() for b in self.buckets],
            "acceptance_by_quintile": list(self.acceptance_by_quintile),
            "treated_share": self.treated_share,
            # nonzero only for odd totals, where exact balance is impossible
            "balance_residual": self.treated_share - 0.5,
            "beta": self.beta,
            "intercept_z": self.intercept_z,
            "intercept_t": self.intercept_t,
        }


def balance_arms(table: RctTable, seed: int) -> RctTable:
    n0, n1 = table.arm_sizes()
    if not n0 or not n1:
        raise DataError(f"both trial arms must be nonempty, got sizes {n0} and {n1}")
    if n0 == n1:
        return table

    rng = generator(seed, "rct2iv", "balance")
    t = table.t
    larger = 1 if n1 > n0 else 0
    candidates = np.flatnonzero(t == larger)
    kept = rng.choice(candidates, size=min(n0, n1), replace=False)
    keep = np.sort(np.concatenate([np.flatnonzero(t != larger), kept]))
    LOG.info(f"balanced arms ({n0}, {n1}) -> ({min(n0, n1)}, {min(n0, n1)})")
    return table.with_frame(table.frame.iloc[keep])


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 2 or a.std() == 0 or b.std() == 0:
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])


def propensity_preservation_check(p_t: np.ndarray, t: np.ndarray, buckets=10):
    """Compare the treated share with the mean intended propensity per p_t decile."""
    order = np.argsort(p_t, kind="stable")
    result = []
    for i, idx in enumerate(np.array_split(order, buckets)):
        if not len(idx):
            continue
        mean_p = float(p_t[idx].mean())
        rate = float(t[idx].mean())
        se = float(np.sqrt(max(mean_p * (1 - mean_p), 1e-12) / len(idx)))
        result.append(PropensityBucket(i, len(idx), mean_p, rate, rate - mean_p, se))
    return tuple(result)


def _calibrate_instrument(score, uniforms, spec: PropensitySpec) -> float:
    """Intercept at which the realized instrument mean crosses the target."""

    def excess(b):
        return (uniforms < spec.clipped(expit(score + b))).mean() - spec.target_mean

    lo, hi = INTERCEPT_BRACKET
    if excess(lo) > 0 or excess(hi) < 0:
        raise DataError("cannot calibrate the instrument intercept within the clip range")
    return float(bisect(excess, lo, hi, xtol=1e-10))


def _calibrate_treatment(score, spec: PropensitySpec) -> float:
    def excess(b):
        return spec.clipped(expit(score + b)).mean() - spec.target_mean

    return float(brentq(excess, *INTERCEPT_BRACKET, xtol=1e-12))


class Propensities(NamedTuple):
    p_z: np.ndarray
    treatment_score: np.ndarray
    spec: PropensitySpec
    beta: float
    intercept_t: float

    def p_t(self, z):
        return self.spec.clipped(expit(self.treatment_score + self.beta * z + self.intercept_t))


def _propensities(table, cfg, uniforms_z, intercepts=None):
    observed = standardize_frame(table.frame[list(cfg.observed_cols)])
    hidden = standardize_frame(table.frame[list(cfg.hidden_cols)])
    score_z = cfg.pz.score(observed)
    score_t = cfg.pt.score(pd.concat([observed, hidden], axis=1))

    if intercepts is not None:
        b_z, b_t = intercepts
    else:
        b_z = cfg.pz.intercept
        if b_z is None:
            b_z = _calibrate_instrument(score_z, uniforms_z, cfg.pz)
        b_t = cfg.pt.intercept
        if b_t is None:
            realized_z = uniforms_z < cfg.pz.clipped(expit(score_z + b_z))
            b_t = _calibrate_treatment(score_t + cfg.beta * realized_z, cfg.pt)
    p_z = cfg.pz.clipped(expit(score_z + b_z))
    return Propensities(p_z, score_t, cfg.pt, cfg.beta, b_t), b_z


def convert(table: RctTable, cfg: ConversionConfig, rescale=None):
    """Accept-reject conversion; returns the IV dataset and its report."""
    cfg.check(table)
    n = len(table.frame)
    if not n:
        raise DataError("cannot convert an empty trial")

    uniforms_z = generator(cfg.seed, "rct2iv", "instrument").random(n)
    props, b_z = _propensities(table, cfg, uniforms_z)
    z = (uniforms_z < props.p_z).astype(np.int64)
    p_t = props.p_t(z)
    t_synth = (generator(cfg.seed, "rct2iv", "treatment").random(n) < p_t).astype(np.int64)

    t_rct = table.t
    accepted = t_synth == t_rct
    index = np.flatnonzero(accepted)
    quintiles = np.array_split(np.argsort(p_t, kind="stable"), 5)
    buckets = propensity_preservation_check(p_t[accepted], t_rct[accepted])

    report = ConversionReport(
        n_input=n,
        n_accepted=len(index),
        acceptance_rate=len(index) / n,
        rho_zt=pearson(z[accepted], t_rct[accepted]),
        pate_label=table.difference_in_means(),
        preservation_gap=max((abs(b.gap) for b in buckets), default=0.0),
        buckets=buckets,
        acceptance_by_quintile=tuple(float(accepted[q].mean()) for q in quintiles if len(q)),
        treated_share=float(t_rct.mean()),
        beta=cfg.beta,
        intercept_z=b_z,
        intercept_t=props.intercept_t,
        accepted_index=index,
        accepted_p_t=p_t[accepted],
    )
    LOG.info(
        f"accepted {report.n_accepted}/{n} rows, rho_zt={report.rho_zt:.3f}, "
        f"pate={report.pate_label:.4f}"
    )
    if abs(report.treated_share - 0.5) > 1 / n:
        LOG.warning(f"trial arms are unbalanced: treated share {report.treated_share:.4f}")

    x = table.frame[list(cfg.observed_cols)].to_numpy(dtype=float)[accepted]
    dataset = build_dataset(
        x,
        z[accepted],
        t_rct[accepted],
        table.y[accepted],
        labels=Labels(report.pate_label),
        rescale=rescale,
        seed=cfg.seed,
        provenance={
            "generator": "rct2iv",
            "beta": cfg.beta,
            "observed_cols": list(cfg.observed_cols),
        },
    )
    return dataset, report


def expected_condprobs(table: RctTable, cfg: ConversionConfig, report: ConversionReport, threshold=None) -> CondProbs:
    """
    Population-limit p_{yt.z} of the accepted sample, pooled over
    covariates, for the conversion that produced ``report``.
    """
    y = table.y if threshold is None else (table.y >= threshold).astype(float)
    if not np.all((y == 0) | (y == 1)):
        raise DataError("expected probabilities need a binary outcome or a threshold")
    props, _ = _propensities(
        table, cfg, None, intercepts=(report.intercept_z, report.intercept_t)
    )
    t = table.t
    mass = np.zeros(8)
    for z in (0, 1):
        pz = props.p_z if z else 1 - props.p_z
        pt = props.p_t(z)
        accept = np.where(t == 1, pt, 1 - pt) * pz
        for yy in (0, 1):
            for tt in (0, 1):
                mass[4 * z + 2 * yy + tt] = accept[(t == tt) & (y == yy)].sum()
    for z in (0, 1):
        total = mass[4 * z : 4 * z + 4].sum()
        if total <= 0:
            raise DataError(f"instrument arm z={z} receives no accepted mass")
        mass[4 * z : 4 * z + 4] /= total
    return CondProbs.from_array(mass)
