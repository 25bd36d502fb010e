"""
Principal strata, observational probabilities and datasets.

A stratum is the bit tuple (T(z=0), T(z=1), Y(t=0), Y(t=1)) encoded as
``8*t0 + 4*t1 + 2*y0 + y1``. Observational probabilities are stored in
the order ``4*z + 2*y + t``, i.e. p00.0, p01.0, p10.0, p11.0, p00.1, ...
where ``pyt.z = P(Y=y, T=t | Z=z)``.
"""

import enum
from dataclasses import dataclass, field, replace
from itertools import product
from typing import NamedTuple, Optional

import numpy as np

from .errors import DataError

EXACT_TOL = 1e-12
ESTIMATED_TOL = 1e-9

StratumIndex = int


class Compliance(enum.StrEnum):
    NEVER_TAKER = "NT"
    COMPLIER = "CO"
    DEFIER = "DE"
    ALWAYS_TAKER = "AT"


class Response(enum.StrEnum):
    ALWAYS_BAD = "AB"
    EFFECTIVE = "EF"
    HARMFUL = "HF"
    ALWAYS_GOOD = "AG"


_COMPLIANCE = {
    (0, 0): Compliance.NEVER_TAKER,
    (0, 1): Compliance.COMPLIER,
    (1, 0): Compliance.DEFIER,
    (1, 1): Compliance.ALWAYS_TAKER,
}
_RESPONSE = {
    (0, 0): Response.ALWAYS_BAD,
    (0, 1): Response.EFFECTIVE,
    (1, 0): Response.HARMFUL,
    (1, 1): Response.ALWAYS_GOOD,
}


def _check_bit(name, value):
    if value not in (0, 1):
        raise DataError(f"{name} must be 0 or 1, got {value!r}")


def stratum_index(t0: int, t1: int, y0: int, y1: int) -> StratumIndex:
    for name, value in (("t0", t0), ("t1", t1), ("y0", y0), ("y1", y1)):
        _check_bit(name, value)
    return 8 * t0 + 4 * t1 + 2 * y0 + y1


def decode_stratum(s: StratumIndex) -> tuple[int, int, int, int]:
    if not 0 <= s <= 15:
        raise DataError(f"stratum index out of range: {s}")
    return (s >> 3) & 1, (s >> 2) & 1, (s >> 1) & 1, s & 1


def stratum_effect(s: StratumIndex) -> int:
    _, _, y0, y1 = decode_stratum(s)
    return y1 - y0


def stratum_name(s: StratumIndex) -> str:
    t0, t1, y0, y1 = decode_stratum(s)
    return f"{_COMPLIANCE[t0, t1]}-{_RESPONSE[y0, y1]}"


def cell_index(y: int, t: int, z: int) -> int:
    return 4 * z + 2 * y + t


# rows: strata, columns: t0, t1, y0, y1
STRATA_BITS = np.array([decode_stratum(s) for s in range(16)], dtype=np.int64)
EFFECTS = (STRATA_BITS[:, 3] - STRATA_BITS[:, 2]).astype(float)

# INCIDENCE[cell(y, t, z), s] == 1 iff T(z)(s) == t and Y(t)(s) == y
INCIDENCE = np.zeros((8, 16))
for _s, (_y, _t, _z) in product(range(16), product((0, 1), repeat=3)):
    if STRATA_BITS[_s, _z] == _t and STRATA_BITS[_s, 2 + _t] == _y:
        INCIDENCE[cell_index(_y, _t, _z), _s] = 1.0

# the four strata compatible with each observed cell, ascending
COMPATIBLE = np.array([np.flatnonzero(row) for row in INCIDENCE], dtype=np.int64)


class CondProbs(NamedTuple):
    """p_{yt.z}; fields may be floats or equally shaped arrays (one entry per row)."""

    p00_0: float
    p01_0: float
    p10_0: float
    p11_0: float
    p00_1: float
    p01_1: float
    p10_1: float
    p11_1: float

    @classmethod
    def from_array(cls, values):
        values = np.asarray(values, dtype=float)
        if values.shape[-1] != 8:
            raise DataError(f"expected 8 probabilities per row, got shape {values.shape}")
        return cls(*np.moveaxis(values, -1, 0))

    def as_array(self) -> np.ndarray:
        return np.stack([np.asarray(v, dtype=float) for v in self], axis=-1)

    def cell(self, y: int, t: int, z: int):
        return self[cell_index(y, t, z)]

    def slice_sums(self) -> np.ndarray:
        a = self.as_array()
        return np.stack([a[..., :4].sum(axis=-1), a[..., 4:].sum(axis=-1)], axis=-1)

    def validate(self, tol=ESTIMATED_TOL):
        a = self.as_array()
        if not np.all(np.isfinite(a)):
            raise DataError("observational probabilities must be finite")
        if np.any(a < -tol) or np.any(a > 1 + tol):
            raise DataError("observational probabilities must lie in [0, 1]")
        if np.any(np.abs(self.slice_sums() - 1) > tol):
            raise DataError("each instrument slice must sum to 1")
        return self

    def renormalized(self):
        a = self.as_array()
        sums = self.slice_sums()
        if np.any(sums <= 0):
            raise DataError("instrument slice with no probability mass")
        a = np.concatenate(
            [a[..., :4] / sums[..., :1], a[..., 4:] / sums[..., 1:]], axis=-1
        )
        return CondProbs.from_array(a)


def check_strata(q, tol=EXACT_TOL) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != 16:
        raise DataError(f"strata distributions have 16 entries, got shape {q.shape}")
    if np.any(q < 0):
        raise DataError("strata probabilities must be non-negative")
    if np.any(np.abs(q.sum(axis=-1) - 1) > tol):
        raise DataError("strata probabilities must sum to 1")
    return q


def strata_to_condprobs(q) -> CondProbs:
    q = np.asarray(q, dtype=float)
    return CondProbs.from_array(q @ INCIDENCE.T)


def sate_of_strata(q):
    p = np.asarray(q, dtype=float) @ EFFECTS
    return float(p) if np.ndim(p) == 0 else p


@dataclass(frozen=True)
class Interval:
    lower: float
    upper: float

    def __post_init__(self):
        if not (np.isfinite(self.lower) and np.isfinite(self.upper)):
            raise DataError(f"interval endpoints must be finite: {self}")
        if self.lower > self.upper:
            raise DataError(f"crossed interval [{self.lower}, {self.upper}]")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, value, tol=0.0) -> bool:
        return self.lower - tol <= value <= self.upper + tol

    def to_dict(self):
        return {"lower": float(self.lower), "upper": float(self.upper)}


@dataclass(frozen=True)
class Crossed:
    """Closed-form bounds on probabilities no IV-consistent strata distribution produces."""

    lower: float
    upper: float
    crossed = True

    def to_dict(self):
        return {"lower": float(self.lower), "upper": float(self.upper), "crossed": True}


@dataclass(frozen=True)
class Labels:
    sate: float
    lower: Optional[float] = None
    upper: Optional[float] = None

    def __post_init__(self):
        if (self.lower is None) != (self.upper is None):
            raise DataError("bound labels come in pairs")
        if self.lower is not None and not (
            self.lower - EXACT_TOL <= self.sate <= self.upper + EXACT_TOL
        ):
            raise DataError(
                f"label sate {self.sate} outside [{self.lower}, {self.upper}]"
            )

    @property
    def bounds(self) -> Optional[Interval]:
        if self.lower is None:
            return None
        return Interval(self.lower, self.upper)

    def scaled(self, factor: float):
        if self.lower is None:
            return Labels(self.sate * factor)
        return Labels(self.sate * factor, self.lower * factor, self.upper * factor)

    def to_dict(self):
        result = {"sate": float(self.sate)}
        if self.lower is not None:
            result.update({"lower": float(self.lower), "upper": float(self.upper)})
        return result


def _as_bits(name, values):
    values = np.asarray(values)
    if values.size and not np.all((values == 0) | (values == 1)):
        raise DataError(f"column {name} must be binary")
    return values.astype(np.int64)


@dataclass(frozen=True)
class IvDataset:
    x: np.ndarray
    z: np.ndarray
    t: np.ndarray
    y: np.ndarray
    labels: Optional[Labels] = None
    seed: int = 0
    y_scale: Optional[tuple[float, float]] = None
    provenance: dict = field(default_factory=dict)
    # optional per-row ground-truth strata distributions (n x 16)
    strata: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1) if x.size else x.reshape(0, 0)
        n = x.shape[0]
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", _as_bits("z", self.z))
        object.__setattr__(self, "t", _as_bits("t", self.t))
        y = np.asarray(self.y, dtype=float)
        object.__setattr__(self, "y", y)

        for name in ("z", "t", "y"):
            if getattr(self, name).shape != (n,):
                raise DataError(f"column {name} has {getattr(self, name).shape}, expected ({n},)")
        if not np.all(np.isfinite(y)):
            raise DataError("outcomes must be finite")
        if y.size and (y.min() < -EXACT_TOL or y.max() > 1 + EXACT_TOL):
            raise DataError("outcomes must lie in [0, 1], rescale them first")
        if self.strata is not None:
            strata = check_strata(self.strata, tol=ESTIMATED_TOL)
            if strata.shape != (n, 16):
                raise DataError(f"strata table has shape {strata.shape}, expected ({n}, 16)")
            object.__setattr__(self, "strata", strata)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def is_binary(self) -> bool:
        return bool(np.all((self.y == 0) | (self.y == 1)))

    @property
    def y_range(self) -> float:
        if self.y_scale is None:
            return 1.0
        return self.y_scale[1] - self.y_scale[0]

    def binarized(self, threshold: float):
        return replace(self, y=(self.y >= threshold).astype(float))

    def to_original_scale(self, interval: Interval) -> Interval:
        """Map an effect interval on the rescaled outcome back to raw outcome units."""
        return Interval(interval.lower * self.y_range, interval.upper * self.y_range)


def rescale_outcome(y) -> tuple[np.ndarray, tuple[float, float]]:
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise DataError("outcomes must be finite")
    if not y.size:
        return y, (0.0, 1.0)
    lo, hi = float(y.min()), float(y.max())
    if hi == lo:
        return np.zeros_like(y), (lo, hi)
    return (y - lo) / (hi - lo), (lo, hi)


def build_dataset(x, z, t, y, *, labels=None, rescale=None, **kwargs) -> IvDataset:
    """
    Assemble a dataset from raw columns.

    ``rescale=None`` rescales only outcomes that leave [0, 1]; labels are
    given in raw outcome units and follow the outcome scale.
    """
    y = np.asarray(y, dtype=float)
    if rescale is None:
        rescale = bool(y.size) and (y.min() < 0 or y.max() > 1)
    if not rescale:
        return IvDataset(x, z, t, y, labels=labels, **kwargs)

    y, scale = rescale_outcome(y)
    width = scale[1] - scale[0]
    if labels is not None:
        labels = labels.scaled(1.0 / width if width > 0 else 0.0)
    return IvDataset(x, z, t, y, labels=labels, y_scale=scale, **kwargs)
