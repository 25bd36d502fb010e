"""
Jobs benchmark from the NSW training trial.

Expected CSV columns: treat, age, education (or educ), black, hispanic,
married, nodegree, re74, re75, re78. Earnings enter on the log1p scale;
prior earnings act as hidden confounders.
"""

from logging import getLogger

import numpy as np
import pandas as pd

from ..errors import DataError
from . import ConversionConfig, RctTable, balance_arms, convert
from .terms import PropensitySpec, Term, TermKind

LOG = getLogger("Jobs")

OBSERVED = ("age", "education", "black", "hispanic", "married", "nodegree")
HIDDEN = ("re74", "re75")
TREATMENT = "treat"
OUTCOME = "re78"
ALIASES = {"educ": "education"}

INSTRUMENT_TERMS = (
    Term(TermKind.LINEAR, ("age",), 0.4),
    Term(TermKind.LINEAR, ("education",), 0.3),
    Term(TermKind.LINEAR, ("black",), -0.3),
    Term(TermKind.LINEAR, ("hispanic",), 0.2),
    Term(TermKind.LINEAR, ("married",), 0.3),
    Term(TermKind.LINEAR, ("nodegree",), -0.2),
    Term(TermKind.SQUARE, ("age",), -0.2),
    Term(TermKind.PRODUCT, ("age", "education"), 0.2),
    Term(TermKind.TANH, ("education", "nodegree"), 0.3),
)
TREATMENT_TERMS = (
    Term(TermKind.LINEAR, ("re74",), 0.6),
    Term(TermKind.LINEAR, ("re75",), 0.6),
    Term(TermKind.SQUARE, ("re75",), -0.2),
    Term(TermKind.PRODUCT, ("re74", "married"), 0.2),
    Term(TermKind.LINEAR, ("age",), 0.2),
    Term(TermKind.LINEAR, ("nodegree",), -0.3),
    Term(TermKind.TANH, ("education", "re74"), 0.3),
)


def jobs_config(beta: float, seed: int) -> ConversionConfig:
    return ConversionConfig(
        OBSERVED,
        HIDDEN,
        PropensitySpec(INSTRUMENT_TERMS),
        PropensitySpec(TREATMENT_TERMS),
        beta=beta,
        seed=seed,
    )


def load_nsw(source) -> RctTable:
    frame = source.copy() if isinstance(source, pd.DataFrame) else pd.read_csv(source)
    frame = frame.rename(columns=ALIASES)
    missing = [c for c in (TREATMENT, OUTCOME, *OBSERVED, *HIDDEN) if c not in frame.columns]
    if missing:
        raise DataError(f"NSW table is missing columns: {', '.join(missing)}")
    for column in (*HIDDEN, OUTCOME):
        if (frame[column] < 0).any():
            raise DataError(f"earnings column {column} has negative values")
        frame[column] = np.log1p(frame[column])
    return RctTable(frame, TREATMENT, OUTCOME)


def jobs_pipeline(source, beta: float, seed: int):
    table = balance_arms(load_nsw(source), seed)
    LOG.info(f"jobs conversion with {beta=} on {len(table.frame)} balanced rows")
    return convert(table, jobs_config(beta, seed), rescale=True)
