"""
Balke-Pearl bounds on the average treatment effect.

The eight lower and eight upper expressions are linear in the
observational probabilities; the sharp bounds are their max and min.
Expressions are indexed 1..8 in the order they are usually listed.
"""

import enum
from dataclasses import dataclass
from logging import getLogger
from typing import NamedTuple

import numpy as np

from .core import ESTIMATED_TOL, CondProbs, Crossed, Interval, IvDataset
from .errors import DataError

LOG = getLogger("Closedform")

DEFAULT_THRESHOLDS = 64


class Side(enum.StrEnum):
    LOWER = "lower"
    UPPER = "upper"


@dataclass(frozen=True)
class PhiVector:
    values: np.ndarray
    side: Side

    def __getitem__(self, j: int):
        if not 1 <= j <= 8:
            raise IndexError(f"expressions are numbered 1..8, got {j}")
        return self.values[j - 1]

    def best(self):
        if self.side == Side.LOWER:
            return self.values.max(axis=0)
        return self.values.min(axis=0)


def phi_lower(p: CondProbs) -> PhiVector:
    return PhiVector(
        np.stack(
            [
                p.p11_1 + p.p00_0 - 1,
                p.p11_0 + p.p00_1 - 1,
                -p.p01_1 - p.p10_1,
                -p.p01_0 - p.p10_0,
                p.p11_0 - p.p11_1 - p.p10_1 - p.p01_0 - p.p10_0,
                p.p11_1 - p.p11_0 - p.p10_0 - p.p01_1 - p.p10_1,
                p.p00_1 - p.p01_1 - p.p10_1 - p.p01_0 - p.p00_0,
                p.p00_0 - p.p01_0 - p.p10_0 - p.p01_1 - p.p00_1,
            ]
        ),
        Side.LOWER,
    )


def phi_upper(p: CondProbs) -> PhiVector:
    return PhiVector(
        np.stack(
            [
                1 - p.p01_1 - p.p10_0,
                1 - p.p01_0 - p.p10_1,
                p.p11_1 + p.p00_1,
                p.p11_0 + p.p00_0,
                -p.p01_0 + p.p01_1 + p.p00_1 + p.p11_0 + p.p00_0,
                -p.p01_1 + p.p11_1 + p.p00_1 + p.p01_0 + p.p00_0,
                -p.p10_1 + p.p11_1 + p.p00_1 + p.p11_0 + p.p10_0,
                -p.p10_0 + p.p11_0 + p.p00_0 + p.p11_1 + p.p10_1,
            ]
        ),
        Side.UPPER,
    )


def instrument_violation(p: CondProbs):
    """
    Largest excess over 1 among the instrumental inequalities

        p00.0 + p10.1 <= 1,  p00.1 + p10.0 <= 1,
        p01.0 + p11.1 <= 1,  p01.1 + p11.0 <= 1.

    Together they characterize the probabilities some strata
    distribution produces, so a positive value means no such
    distribution exists.
    """
    return (
        np.stack(
            [
                p.p00_0 + p.p10_1,
                p.p00_1 + p.p10_0,
                p.p01_0 + p.p11_1,
                p.p01_1 + p.p11_0,
            ]
        ).max(axis=0)
        - 1
    )


def is_iv_feasible(p: CondProbs, tol=ESTIMATED_TOL):
    return instrument_violation(p) <= tol


class RowBounds(NamedTuple):
    lower: np.ndarray
    upper: np.ndarray
    crossed: np.ndarray


def row_bounds(p: CondProbs, tol=ESTIMATED_TOL) -> RowBounds:
    """Vectorized conditional bounds: one entry per row of ``p``."""
    lower = np.atleast_1d(phi_lower(p).best())
    upper = np.atleast_1d(phi_upper(p).best())
    crossed = (lower > upper + tol) | (np.atleast_1d(instrument_violation(p)) > tol)
    return RowBounds(lower, upper, crossed)


def conditional_bounds(p: CondProbs, tol=ESTIMATED_TOL) -> Interval | Crossed:
    lower = float(phi_lower(p).best())
    upper = float(phi_upper(p).best())
    if lower > upper + tol or float(instrument_violation(p)) > tol:
        return Crossed(lower, upper)
    # tolerance-level inversions collapse onto the midpoint
    if lower > upper:
        lower = upper = (lower + upper) / 2
    return Interval(lower, upper)


class SateBounds(NamedTuple):
    interval: Interval
    crossed_rows: int
    n_rows: int

    def to_dict(self):
        return {
            **self.interval.to_dict(),
            "crossed_rows": self.crossed_rows,
            "n_rows": self.n_rows,
        }


def average_row_bounds(bounds: RowBounds, y_range=1.0) -> SateBounds:
    """
    Average per-row bounds, replacing crossed rows by the outcome range
    [-y_range, y_range].
    """
    n = len(bounds.lower)
    if not n:
        raise DataError("cannot bound the effect of an empty dataset")
    lower = np.where(bounds.crossed, -y_range, bounds.lower)
    upper = np.where(bounds.crossed, y_range, bounds.upper)
    upper = np.maximum(upper, lower)
    crossed = int(bounds.crossed.sum())
    if crossed:
        LOG.warning(f"{crossed} of {n} rows have crossed bounds, clipped to the outcome range")
    return SateBounds(
        Interval(float(np.mean(lower)), float(np.mean(upper))), crossed, n
    )


def sate_bounds(dataset: IvDataset, model) -> SateBounds:
    """Average the conditional bounds of ``model`` over the covariates of ``dataset``."""
    try:
        p = model.predict(dataset.x)
    except DataError:
        raise
    except Exception as e:
        raise DataError(f"model could not score the dataset: {e}") from e
    p.validate()
    return average_row_bounds(row_bounds(p))


def manski_width(y_min: float, y_max: float) -> float:
    if y_min > y_max:
        raise DataError(f"outcome range is reversed: {y_min} > {y_max}")
    return y_max - y_min


def threshold_grid(count=DEFAULT_THRESHOLDS) -> np.ndarray:
    if count < 2:
        raise DataError(f"threshold grid needs at least 2 points, got {count}")
    return (np.arange(count) + 0.5) / count


def binarizations(y: np.ndarray, thresholds: np.ndarray):
    """
    Group thresholds by the binary outcome they produce.

    Yields ``(weight, y_binary)`` with weights summing to 1.
    """
    groups = {}
    for s in thresholds:
        binary = (y >= s).astype(float)
        key = binary.tobytes()
        if key in groups:
            groups[key][0] += 1
        else:
            groups[key] = [1, binary]
    for count, binary in groups.values():
        yield count / len(thresholds), binary


def continuous_outcome_bounds(
    dataset: IvDataset, model_factory, thresholds=DEFAULT_THRESHOLDS
) -> SateBounds:
    """
    Bounds for an outcome in [0, 1] as the average of binary-outcome
    bounds over a midpoint threshold grid, using
    E[Y(1) - Y(0)] = integral of P(Y(1) >= s) - P(Y(0) >= s) over s.
    """
    grid = threshold_grid(thresholds)
    parts = []
    crossed = 0
    for weight, binary in binarizations(dataset.y, grid):
        binary_dataset = IvDataset(
            dataset.x, dataset.z, dataset.t, binary, seed=dataset.seed
        )
        bounds = sate_bounds(binary_dataset, model_factory(binary_dataset))
        LOG.debug(f"threshold group {weight=:.4f} -> {bounds.interval}")
        parts.append((weight, bounds.interval))
        crossed = max(crossed, bounds.crossed_rows)

    if len(parts) == 1:
        return SateBounds(parts[0][1], crossed, dataset.n)
    lower = sum(w * i.lower for w, i in parts)
    upper = sum(w * i.upper for w, i in parts)
    return SateBounds(Interval(lower, max(lower, upper)), crossed, dataset.n)
