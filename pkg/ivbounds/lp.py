"""
The strata linear program, solved by a small dense simplex.

Minimizes / maximizes the average treatment effect over strata
distributions that reproduce given observational probabilities. The
program has 16 variables and 7 independent equalities (three cells per
instrument slice plus the simplex constraint); pivoting follows Bland's
rule so results are deterministic.
"""

import enum
from itertools import combinations
from logging import getLogger
from typing import NamedTuple, Optional

import numpy as np

from .closedform import RowBounds, phi_lower, phi_upper
from .core import EFFECTS, INCIDENCE, CondProbs, strata_to_condprobs
from .errors import NumericError, SharpnessError

LOG = getLogger("LP")

PIVOT_TOL = 1e-12
FEASIBILITY_TOL = 1e-9
MAX_PIVOTS = 500

# rows dropped in favour of the simplex constraint, one per instrument slice
_REDUNDANT_ROWS = (3, 7)


class LpStatus(enum.StrEnum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"


class StrataLp(NamedTuple):
    objective: np.ndarray
    eq_constraints: np.ndarray
    rhs: np.ndarray

    def independent_system(self):
        keep = [i for i in range(8) if i not in _REDUNDANT_ROWS]
        a = np.vstack([self.eq_constraints[keep], np.ones(16)])
        b = np.append(self.rhs[keep], 1.0)
        return a, b


class LpSolution(NamedTuple):
    status: LpStatus
    value: float
    witness: Optional[np.ndarray]

    @property
    def feasible(self) -> bool:
        return self.status == LpStatus.OPTIMAL


class SharpnessReport(NamedTuple):
    lower_gap: float
    upper_gap: float


def build_lp(p: CondProbs) -> StrataLp:
    return StrataLp(EFFECTS.copy(), INCIDENCE.copy(), p.as_array().astype(float))


def _pivot(tableau, basis, row, col):
    tableau[row] /= tableau[row, col]
    factors = tableau[:, col].copy()
    factors[row] = 0.0
    tableau -= np.outer(factors, tableau[row])
    basis[row] = col


def _run(tableau, basis, allowed):
    m = len(basis)
    for _ in range(MAX_PIVOTS):
        entering = np.flatnonzero(tableau[m, :allowed] < -PIVOT_TOL)
        if not entering.size:
            return
        col = entering[0]
        column = tableau[:m, col]
        rows = np.flatnonzero(column > PIVOT_TOL)
        if not rows.size:
            raise NumericError("strata LP is unbounded")
        ratios = tableau[rows, -1] / column[rows]
        ties = rows[ratios <= ratios.min() + PIVOT_TOL]
        row = min(ties, key=lambda r: basis[r])
        _pivot(tableau, basis, row, col)
    raise NumericError(f"simplex did not terminate within {MAX_PIVOTS} pivots")


def simplex(a, b, c):
    """
    Minimize ``c @ x`` subject to ``a @ x == b`` and ``x >= 0``.

    Returns ``(status, value, x)``; two phases with artificial variables.
    """
    a = np.array(a, dtype=float)
    b = np.array(b, dtype=float)
    m, n = a.shape
    negative = b < 0
    a[negative] *= -1
    b[negative] *= -1

    tableau = np.zeros((m + 1, n + m + 1))
    tableau[:m, :n] = a
    tableau[:m, n : n + m] = np.eye(m)
    tableau[:m, -1] = b
    tableau[m, :n] = -a.sum(axis=0)
    tableau[m, -1] = -b.sum()
    basis = list(range(n, n + m))

    _run(tableau, basis, n + m)
    if -tableau[m, -1] > FEASIBILITY_TOL:
        return LpStatus.INFEASIBLE, float("nan"), None

    for row in range(m):
        if basis[row] >= n:
            cols = np.flatnonzero(np.abs(tableau[row, :n]) > PIVOT_TOL)
            if cols.size:
                _pivot(tableau, basis, row, cols[0])

    tableau[m] = 0.0
    tableau[m, :n] = c
    for row, var in enumerate(basis):
        if var < n:
            tableau[m] -= c[var] * tableau[row]
    _run(tableau, basis, n)

    x = np.zeros(n)
    for row, var in enumerate(basis):
        if var < n:
            x[var] = max(tableau[row, -1], 0.0)
    return LpStatus.OPTIMAL, float(c @ x), x


def _solve(lp: StrataLp, sign: float) -> LpSolution:
    a, b = lp.independent_system()
    status, _, x = simplex(a, b, sign * lp.objective)
    if status == LpStatus.INFEASIBLE:
        return LpSolution(status, float("nan"), None)
    return LpSolution(status, float(lp.objective @ x), x)


def solve_min_max(p: CondProbs) -> tuple[LpSolution, LpSolution]:
    lp = build_lp(p.renormalized())
    low = _solve(lp, 1.0)
    if not low.feasible:
        LOG.debug(f"infeasible observational probabilities {p}")
        return low, low
    return low, _solve(lp, -1.0)


def lp_row_bounds(p: CondProbs) -> RowBounds:
    """LP bounds for every row of ``p``; identical rows are solved once."""
    rows = np.atleast_2d(p.as_array())
    unique, inverse = np.unique(rows, axis=0, return_inverse=True)
    lower = np.full(len(unique), np.nan)
    upper = np.full(len(unique), np.nan)
    for i, row in enumerate(unique):
        low, high = solve_min_max(CondProbs.from_array(row))
        if low.feasible:
            lower[i], upper[i] = low.value, high.value
    LOG.debug(f"solved {len(unique)} distinct rows out of {len(rows)}")
    inverse = inverse.reshape(-1)
    return RowBounds(lower[inverse], upper[inverse], np.isnan(lower)[inverse])


def verify_witness(solution: LpSolution, p: CondProbs, tol=FEASIBILITY_TOL) -> bool:
    if not solution.feasible:
        return False
    w = solution.witness
    reproduced = strata_to_condprobs(w).as_array()
    return bool(
        np.all(w >= -tol)
        and abs(w.sum() - 1) <= tol
        and np.all(np.abs(reproduced - p.renormalized().as_array()) <= tol)
        and abs(EFFECTS @ w - solution.value) <= tol
    )


def check_sharpness(p: CondProbs, tol=1e-8) -> SharpnessReport:
    low, high = solve_min_max(p)
    if not low.feasible:
        raise NumericError("observational probabilities are not IV-feasible")
    report = SharpnessReport(
        abs(low.value - float(phi_lower(p).best())),
        abs(high.value - float(phi_upper(p).best())),
    )
    if report.lower_gap > tol or report.upper_gap > tol:
        raise SharpnessError(report.lower_gap, report.upper_gap, tol)
    return report


def enumerate_min_max(p: CondProbs) -> Optional[tuple[float, float]]:
    """
    Exhaustive search over basic feasible solutions, an independent
    cross-check of the simplex. Returns None when nothing is feasible.
    """
    a, b = build_lp(p.renormalized()).independent_system()
    m = a.shape[0]
    subsets = np.array(list(combinations(range(16), m)))
    blocks = a[:, subsets].transpose(1, 0, 2)
    regular = np.abs(np.linalg.det(blocks)) > 0.5
    subsets, blocks = subsets[regular], blocks[regular]
    solutions = np.linalg.solve(blocks, np.broadcast_to(b, (len(blocks), m))[..., None])[..., 0]
    feasible = np.all(solutions >= -FEASIBILITY_TOL, axis=1)
    if not feasible.any():
        return None
    values = (EFFECTS[subsets[feasible]] * solutions[feasible]).sum(axis=1)
    return float(values.min()), float(values.max())
