"""
A small serializable language for propensity scores.

A score is a sum of terms over standardized columns:

    linear   coef * x
    square   coef * (x^2 - 1)
    product  coef * x_a * x_b
    tanh     coef * tanh(sum of the listed columns)

plus an intercept that is either fixed or calibrated so the mean
propensity hits ``target_mean``.
"""

import enum
from typing import NamedTuple, Optional

import numpy as np
import pandas as pd

from ..errors import ConfigError


class TermKind(enum.StrEnum):
    LINEAR = "linear"
    SQUARE = "square"
    PRODUCT = "product"
    TANH = "tanh"


_ARITY = {
    TermKind.LINEAR: 1,
    TermKind.SQUARE: 1,
    TermKind.PRODUCT: 2,
}


class Term(NamedTuple):
    kind: TermKind
    columns: tuple[str, ...]
    coef: float

    def evaluate(self, frame: pd.DataFrame) -> np.ndarray:
        values = [frame[c].to_numpy(dtype=float) for c in self.columns]
        match self.kind:
            case TermKind.LINEAR:
                return self.coef * values[0]
            case TermKind.SQUARE:
                return self.coef * (values[0] ** 2 - 1.0)
            case TermKind.PRODUCT:
                return self.coef * values[0] * values[1]
            case TermKind.TANH:
                return self.coef * np.tanh(np.sum(values, axis=0))

    def to_dict(self):
        return {"kind": str(self.kind), "columns": list(self.columns), "coef": self.coef}

    @classmethod
    def from_dict(cls, data):
        try:
            kind = TermKind(data["kind"])
            term = cls(kind, tuple(data["columns"]), float(data["coef"]))
        except (KeyError, ValueError, TypeError) as e:
            raise ConfigError(f"invalid propensity term {data!r}: {e}") from e
        arity = _ARITY.get(kind)
        if (arity is not None and len(term.columns) != arity) or not term.columns:
            raise ConfigError(f"term {kind} takes {arity or 'one or more'} columns")
        return term


class PropensitySpec(NamedTuple):
    terms: tuple[Term, ...] = ()
    intercept: Optional[float] = None
    target_mean: float = 0.5
    clip: tuple[float, float] = (0.05, 0.95)

    @property
    def columns(self) -> set[str]:
        return {c for term in self.terms for c in term.columns}

    def score(self, frame: pd.DataFrame) -> np.ndarray:
        result = np.zeros(len(frame))
        for term in self.terms:
            result += term.evaluate(frame)
        return result

    def clipped(self, p: np.ndarray) -> np.ndarray:
        return np.clip(p, *self.clip)

    def check(self, name):
        lo, hi = self.clip
        if not 0 < lo < hi < 1:
            raise ConfigError(f"{name}.clip must lie strictly inside (0, 1), got {self.clip}")
        if not lo < self.target_mean < hi:
            raise ConfigError(f"{name}.target_mean must lie inside the clip range")

    def to_dict(self):
        result = {
            "terms": [t.to_dict() for t in self.terms],
            "target_mean": self.target_mean,
            "clip": list(self.clip),
        }
        if self.intercept is not None:
            result["intercept"] = self.intercept
        return result

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - {"terms", "intercept", "target_mean", "clip"}
        if unknown:
            raise ConfigError(f"unknown propensity keys: {', '.join(sorted(unknown))}")
        return cls(
            tuple(Term.from_dict(t) for t in data.get("terms", ())),
            data.get("intercept"),
            float(data.get("target_mean", 0.5)),
            tuple(data.get("clip", (0.05, 0.95))),
        )


def standardize_frame(frame: pd.DataFrame) -> pd.DataFrame:
    values = frame.astype(float)
    sd = values.std(ddof=0).replace(0.0, 1.0)
    return (values - values.mean()) / sd
