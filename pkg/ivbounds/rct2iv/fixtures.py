"""
Small synthetic trials shaped like the real inputs.

The real NSW and STAR files are not shipped; these generators produce
tables with the same schema (and, for ``synthetic_rct``, the potential
outcomes) so conversions can be exercised and checked end to end.
"""

import numpy as np
import pandas as pd

from ..seeds import generator
from .star import GRADES


def balanced_assignment(rng, n: int) -> np.ndarray:
    t = np.zeros(n, dtype=np.int64)
    t[: n // 2] = 1
    return rng.permutation(t)


def synthetic_rct(n: int, seed: int, effect=1.0, heterogeneity=0.5, binary=False) -> pd.DataFrame:
    """
    Balanced trial with two observed (o0, o1) and two hidden (u0, u1)
    covariates, potential outcomes y0 and y1, treatment t and outcome y.
    """
    rng = generator(seed, "fixtures", "rct")
    o = rng.normal(size=(n, 2))
    u = rng.normal(size=(n, 2))
    if binary:
        base = 0.3 * o[:, 0] + 0.5 * u[:, 0]
        shared = rng.random(n)
        y0 = (shared < 1 / (1 + np.exp(-(base - 0.5)))).astype(float)
        y1 = (shared < 1 / (1 + np.exp(-(base + effect + heterogeneity * u[:, 1])))).astype(float)
    else:
        y0 = o[:, 0] + u[:, 0] + rng.normal(scale=0.5, size=n)
        y1 = y0 + effect + heterogeneity * u[:, 1]
    t = balanced_assignment(rng, n)
    return pd.DataFrame(
        {
            "o0": o[:, 0],
            "o1": o[:, 1],
            "u0": u[:, 0],
            "u1": u[:, 1],
            "y0": y0,
            "y1": y1,
            "t": t,
            "y": np.where(t == 1, y1, y0),
        }
    )


def synthetic_nsw(n: int, seed: int, effect=1500.0) -> pd.DataFrame:
    rng = generator(seed, "fixtures", "nsw")
    age = rng.integers(17, 55, size=n)
    education = rng.integers(3, 17, size=n)
    black = (rng.random(n) < 0.8).astype(int)
    hispanic = ((rng.random(n) < 0.5) & (black == 0)).astype(int)
    married = (rng.random(n) < 0.17).astype(int)
    nodegree = (education < 12).astype(int)

    ability = rng.normal(size=n)
    employed74 = rng.random(n) < 1 / (1 + np.exp(-(ability - 0.5)))
    employed75 = rng.random(n) < 1 / (1 + np.exp(-(ability - 0.3)))
    re74 = np.where(employed74, rng.gamma(2.0, 2500.0, size=n) * np.exp(0.3 * ability), 0.0)
    re75 = np.where(employed75, rng.gamma(2.0, 2500.0, size=n) * np.exp(0.3 * ability), 0.0)

    treat = (rng.random(n) < 0.45).astype(int)
    employed78 = rng.random(n) < 1 / (1 + np.exp(-(0.8 * ability + 0.3 + 0.4 * treat)))
    level = 0.5 * re75 + 300.0 * education + effect * treat
    re78 = np.where(employed78, np.maximum(level + rng.normal(scale=3000.0, size=n), 0.0), 0.0)
    return pd.DataFrame(
        {
            "treat": treat,
            "age": age,
            "education": education,
            "black": black,
            "hispanic": hispanic,
            "married": married,
            "nodegree": nodegree,
            "re74": re74,
            "re75": re75,
            "re78": re78,
        }
    )


def synthetic_star(n: int, seed: int) -> pd.DataFrame:
    rng = generator(seed, "fixtures", "star")
    entry = rng.choice(len(GRADES), size=n, p=(0.55, 0.2, 0.15, 0.1))
    class_type = rng.choice(("small", "regular", "regular+aide"), size=n)
    frame = {
        "gender": rng.choice(("male", "female"), size=n),
        "ethnicity": rng.choice(("cauc", "afam", "asian"), size=n, p=(0.65, 0.33, 0.02)),
        "birth": [f"{int(y)} Q{int(q)}" for y, q in zip(rng.integers(1977, 1982, size=n), rng.integers(1, 5, size=n))],
    }
    small_boost = np.where(class_type == "small", 8.0, 0.0)
    for i, g in enumerate(GRADES):
        present = entry <= i
        base = 440.0 + 40.0 * i + rng.normal(scale=30.0, size=n)
        frame[f"star{g}"] = np.where(present, class_type, None)
        frame[f"read{g}"] = np.where(present, base + small_boost, np.nan)
        frame[f"math{g}"] = np.where(present, base + 10.0 + small_boost, np.nan)
        frame[f"lunch{g}"] = np.where(present, rng.choice(("free", "non-free"), size=n), None)
        frame[f"school{g}"] = np.where(
            present, rng.choice(("inner-city", "suburban", "rural", "urban"), size=n), None
        )
        frame[f"degree{g}"] = np.where(present, rng.choice(("bachelor", "master"), size=n), None)
        frame[f"ladder{g}"] = np.where(present, rng.choice(("notladder", "level1", "level2"), size=n), None)
        frame[f"experience{g}"] = np.where(present, rng.integers(0, 30, size=n).astype(float), np.nan)
        frame[f"tethnicity{g}"] = np.where(present, rng.choice(("cauc", "afam"), size=n), None)
    return pd.DataFrame(frame)
