"""
STAR benchmark from the Tennessee class-size trial.

Expected CSV layout (one row per student, grade suffixes k, 1, 2, 3):

    gender          "male" / "female"
    ethnicity       "cauc", "afam", ...
    birth           year and quarter, e.g. "1980 Q2" or 1980.25
    star{g}         class type: "small", "regular", "regular+aide" or empty
    read{g} math{g} scaled test scores
    lunch{g}        "free" / "non-free"
    school{g}       "inner-city", "suburban", "rural", "urban"
    degree{g}       teacher degree: "bachelor", "master", "specialist", "phd"
    ladder{g}       teacher career ladder: "notladder", "level1", ...
    experience{g}   teacher years of experience
    tethnicity{g}   teacher ethnicity

Each student enters at the earliest grade with an observed class type;
that grade's columns form the snapshot.
"""

import re
from logging import getLogger

import numpy as np
import pandas as pd

from ..errors import DataError
from . import ConversionConfig, RctTable, balance_arms, convert
from .terms import PropensitySpec, Term, TermKind

LOG = getLogger("Star")

GRADES = ("k", "1", "2", "3")
CONTRASTS = {
    "small-vs-regular": ("small", "regular"),
    "aide-vs-regular": ("regular+aide", "regular"),
}
OUTCOMES = ("math", "reading")
_SCORE_PREFIX = {"math": "math", "reading": "read"}

OBSERVED = (
    "female",
    "birth_quarter",
    "white",
    "entry_grade_1",
    "entry_grade_2",
    "entry_grade_3",
    "teacher_advanced_degree",
    "teacher_on_ladder",
)
HIDDEN = ("inner_city", "rural", "free_lunch", "teacher_white", "experience")

INSTRUMENT_TERMS = (
    Term(TermKind.LINEAR, ("female",), 0.2),
    Term(TermKind.LINEAR, ("white",), 0.4),
    Term(TermKind.LINEAR, ("birth_quarter",), -0.2),
    Term(TermKind.LINEAR, ("entry_grade_1",), 0.2),
    Term(TermKind.LINEAR, ("teacher_advanced_degree",), 0.3),
    Term(TermKind.PRODUCT, ("white", "teacher_on_ladder"), 0.2),
    Term(TermKind.TANH, ("female", "birth_quarter"), 0.3),
)
TREATMENT_TERMS = (
    Term(TermKind.LINEAR, ("free_lunch",), -0.6),
    Term(TermKind.LINEAR, ("inner_city",), 0.5),
    Term(TermKind.LINEAR, ("rural",), -0.3),
    Term(TermKind.LINEAR, ("experience",), 0.4),
    Term(TermKind.SQUARE, ("experience",), -0.2),
    Term(TermKind.PRODUCT, ("teacher_white", "white"), 0.3),
    Term(TermKind.LINEAR, ("teacher_advanced_degree",), 0.2),
)


def star_config(beta: float, seed: int) -> ConversionConfig:
    return ConversionConfig(
        OBSERVED,
        HIDDEN,
        PropensitySpec(INSTRUMENT_TERMS),
        PropensitySpec(TREATMENT_TERMS),
        beta=beta,
        seed=seed,
    )


def birth_quarter(value) -> float:
    if pd.isna(value):
        return np.nan
    if isinstance(value, str):
        match = re.search(r"Q([1-4])", value)
        if match:
            return float(match.group(1))
        value = float(value)
    return float(int(round((float(value) % 1) * 4)) % 4 + 1)


def _required_columns():
    columns = ["gender", "ethnicity", "birth"]
    for g in GRADES:
        columns += [
            f"star{g}", f"read{g}", f"math{g}", f"lunch{g}", f"school{g}",
            f"degree{g}", f"ladder{g}", f"experience{g}", f"tethnicity{g}",
        ]
    return columns


def star_snapshot(frame: pd.DataFrame, contrast: str, outcome: str) -> RctTable:
    if contrast not in CONTRASTS:
        raise DataError(f"unknown contrast {contrast!r}, expected one of {', '.join(CONTRASTS)}")
    if outcome not in OUTCOMES:
        raise DataError(f"unknown outcome {outcome!r}, expected math or reading")
    missing = [c for c in _required_columns() if c not in frame.columns]
    if missing:
        raise DataError(f"STAR table is missing columns: {', '.join(missing)}")

    class_types = frame[[f"star{g}" for g in GRADES]]
    observed_type = class_types.notna().to_numpy()
    has_type = observed_type.any(axis=1)
    entry = observed_type.argmax(axis=1)
    rows = np.flatnonzero(has_type)

    def at_entry(prefix):
        values = frame[[f"{prefix}{g}" for g in GRADES]].to_numpy(dtype=object)
        return values[rows, entry[rows]]

    treated_code, control_code = CONTRASTS[contrast]
    snapshot = pd.DataFrame(
        {
            "entry_grade": entry[rows],
            "class_type": at_entry("star"),
            "score": pd.to_numeric(at_entry(_SCORE_PREFIX[outcome]), errors="coerce"),
            "female": (frame["gender"].to_numpy()[rows] == "female").astype(float),
            "birth_quarter": [birth_quarter(v) for v in frame["birth"].to_numpy()[rows]],
            "white": (frame["ethnicity"].to_numpy()[rows] == "cauc").astype(float),
            "teacher_advanced_degree": np.isin(
                at_entry("degree"), ("master", "specialist", "phd")
            ).astype(float),
            "teacher_on_ladder": np.isin(
                at_entry("ladder"), ("level1", "level2", "level3", "apprentice", "probation")
            ).astype(float),
            "inner_city": (at_entry("school") == "inner-city").astype(float),
            "rural": (at_entry("school") == "rural").astype(float),
            "free_lunch": (at_entry("lunch") == "free").astype(float),
            "teacher_white": (at_entry("tethnicity") == "cauc").astype(float),
            "experience": pd.to_numeric(at_entry("experience"), errors="coerce"),
        }
    )
    for g in (1, 2, 3):
        snapshot[f"entry_grade_{g}"] = (snapshot["entry_grade"] == g).astype(float)

    snapshot = snapshot[snapshot["class_type"].isin((treated_code, control_code))]
    before = len(snapshot)
    snapshot = snapshot.dropna(subset=["score", "birth_quarter", "experience"])
    if len(snapshot) < before:
        LOG.info(f"dropped {before - len(snapshot)} students with incomplete entry-grade data")

    arms = snapshot["class_type"].value_counts()
    for code in (treated_code, control_code):
        if not arms.get(code, 0):
            raise DataError(f"contrast arm {code!r} is empty")

    grouped = snapshot.groupby("entry_grade")["score"]
    sd = grouped.transform(lambda s: s.std(ddof=0)).replace(0.0, 1.0)
    snapshot["score"] = (snapshot["score"] - grouped.transform("mean")) / sd
    snapshot["t"] = (snapshot["class_type"] == treated_code).astype(np.int64)
    return RctTable(snapshot.reset_index(drop=True), "t", "score")


def star_pipeline(source, contrast: str, outcome: str, beta: float, seed: int):
    frame = source if isinstance(source, pd.DataFrame) else pd.read_csv(source)
    table = balance_arms(star_snapshot(frame, contrast, outcome), seed)
    LOG.info(f"star conversion {contrast} {outcome} with {beta=} on {len(table.frame)} rows")
    return convert(table, star_config(beta, seed), rescale=True)
