"""
Dense two-phase primal simplex, and the l1-minimization programs built on it
"""
import logging
from dataclasses import dataclass
from typing import Literal, Optional, Union

import numpy as np

from hdinfer.annotations import Matrix, Vector
from hdinfer.linalg_core import DimensionError, DomainError


# ======
# Logger
# ======
logger = logging.getLogger(__name__)


# =========
# Constants
# =========
FEASIBILITY_TOL = 1e-9
OPTIMALITY_TOL = 1e-9
PIVOT_TOL = 1e-10
_RATIO_TIE_TOL = 1e-12
# Bland's rule kicks in after this many pivots per (rows + cols)
_BLAND_SWITCH_FACTOR = 3
# Hard cap on pivots per (rows + cols), past the switch to Bland's rule
_ITERATION_CAP_FACTOR = 50
LE = "<="
GE = ">="
EQ = "="
_SENSES = (LE, GE, EQ)
_FLIPPED_SENSE = {LE: GE, GE: LE, EQ: EQ}
OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


# ==========
# Exceptions
# ==========
class LpIterationLimitError(Exception):
    """Simplex hit its safety cap on the number of pivots"""

    pass


# ==========
# Data model
# ==========
@dataclass(frozen=True)
class LinearProgram:
    """min c'x s.t. A x (<=, >=, =) b, lower <= x <= upper

    `lower` defaults to 0 for every variable and may hold -np.inf; `upper`
    defaults to +np.inf.
    """

    c: Vector
    A: Matrix
    b: Vector
    senses: tuple
    lower: Optional[Vector] = None
    upper: Optional[Vector] = None


@dataclass(frozen=True)
class LpSolution:
    """Outcome of `solve_lp`

    `x` and `objective_value` are NaN unless status is optimal (the objective
    is -inf when unbounded).
    """

    status: Literal["optimal", "infeasible", "unbounded"]
    x: Vector
    objective_value: float
    iterations: int = 0


# =======
# Helpers
# =======
def _validate(lp: LinearProgram):
    c = np.asarray(lp.c, dtype=float)
    if c.ndim != 1 or c.size == 0:
        raise DimensionError(
            f"Objective must be a nonempty vector, {c.shape=}"
        )
    n_vars = c.size
    A = np.asarray(lp.A, dtype=float)
    if A.size == 0:
        A = A.reshape(0, n_vars)
    b = np.asarray(lp.b, dtype=float).reshape(-1)
    senses = tuple(lp.senses)
    if A.ndim != 2 or A.shape[1] != n_vars:
        raise DimensionError(f"A must have {n_vars} columns, got {A.shape=}")
    if not (A.shape[0] == b.size == len(senses)):
        raise DimensionError(
            f"Row counts disagree: {A.shape[0]=}, {b.size=}, {len(senses)=}"
        )
    unknown_senses = set(senses) - set(_SENSES)
    if unknown_senses:
        raise DomainError(f"Unknown constraint senses {unknown_senses}")
    lower = (
        np.zeros(n_vars)
        if lp.lower is None
        else np.asarray(lp.lower, dtype=float).reshape(-1)
    )
    upper = (
        np.full(n_vars, np.inf)
        if lp.upper is None
        else np.asarray(lp.upper, dtype=float).reshape(-1)
    )
    if lower.size != n_vars or upper.size != n_vars:
        raise DimensionError("Bounds must have one entry per variable")
    if np.any(lower == np.inf) or np.any(upper == -np.inf):
        raise DomainError("Lower bounds cannot be +inf nor upper bounds -inf")
    return c, A, b, senses, lower, upper


def _to_nonnegative_variables(lower: Vector, upper: Vector):
    """Rewrite x = offset + transform @ x' with x' >= 0

    Returns:
        offset, transform, and the (column, bound) pairs for x'_col <= bound
        coming from doubly-bounded variables
    """
    n_vars = lower.size
    offset = np.zeros(n_vars)
    columns = []
    upper_rows = []
    for j in range(n_vars):
        lo, up = lower[j], upper[j]
        if np.isfinite(lo):
            offset[j] = lo
            columns.append((j, 1.0))
            if np.isfinite(up):
                upper_rows.append((len(columns) - 1, up - lo))
        elif np.isfinite(up):
            offset[j] = up
            columns.append((j, -1.0))
        else:
            columns.append((j, 1.0))
            columns.append((j, -1.0))
    transform = np.zeros((n_vars, len(columns)))
    for col, (j, sign) in enumerate(columns):
        transform[j, col] = sign
    return offset, transform, upper_rows


def _pivot(tab: np.ndarray, obj: np.ndarray, row: int, col: int):
    tab[row] /= tab[row, col]
    factors = tab[:, col].copy()
    factors[row] = 0.0
    tab -= np.outer(factors, tab[row])
    obj -= obj[col] * tab[row]
    tab[:, col] = 0.0
    tab[row, col] = 1.0
    obj[col] = 0.0
    # Flush round-off that would make a basic variable slightly negative
    rhs = tab[:, -1]
    rhs[(rhs < 0.0) & (rhs > -FEASIBILITY_TOL)] = 0.0


def _run_simplex(tab: np.ndarray, obj: np.ndarray, basis: list):
    """Minimize over the current tableau in place

    Largest-coefficient entering rule, switching to Bland's rule after
    3 * (rows + cols) pivots. Ratio-test ties go to the lowest basic index.

    Returns:
        status (str) and number of pivots
    """
    n_rows, n_cols = tab.shape[0], tab.shape[1] - 1
    bland_after = _BLAND_SWITCH_FACTOR * (n_rows + n_cols)
    cap = bland_after + _ITERATION_CAP_FACTOR * (n_rows + n_cols)
    iterations = 0
    while True:
        reduced = obj[:n_cols]
        use_bland = iterations >= bland_after
        if iterations == bland_after and bland_after > 0:
            logger.debug(f"-- Switch to Bland's rule after {iterations=}")
        if use_bland:
            candidates = np.flatnonzero(reduced < -OPTIMALITY_TOL)
            if candidates.size == 0:
                return OPTIMAL, iterations
            col = int(candidates[0])
        else:
            col = int(np.argmin(reduced)) if n_cols > 0 else 0
            if n_cols == 0 or reduced[col] >= -OPTIMALITY_TOL:
                return OPTIMAL, iterations
        column = tab[:, col]
        eligible = np.flatnonzero(column > PIVOT_TOL)
        if eligible.size == 0:
            return UNBOUNDED, iterations
        ratios = tab[eligible, -1] / column[eligible]
        ties = eligible[ratios <= ratios.min() + _RATIO_TIE_TOL]
        row = int(min(ties, key=lambda r: basis[r]))
        _pivot(tab=tab, obj=obj, row=row, col=col)
        basis[row] = col
        iterations += 1
        if iterations > cap:
            raise LpIterationLimitError(
                f"Simplex did not terminate after {iterations} pivots"
            )


# ====
# Core
# ====
def solve_lp(lp: LinearProgram) -> LpSolution:
    """Solve a dense linear program with the two-phase primal simplex

    Args:
        lp (LinearProgram): the program

    Returns:
        LpSolution: status is "optimal", "infeasible" or "unbounded". When
        optimal, x satisfies every constraint within 1e-9.

    Raises:
        DimensionError: when c, A, b, senses or bounds disagree in size
    """
    c, A, b, senses, lower, upper = _validate(lp)
    n_vars = c.size
    offset, transform, upper_rows = _to_nonnegative_variables(lower, upper)
    # Constraints on the nonnegative variables
    A_std = A @ transform
    b_std = b - A @ offset
    senses_std = list(senses)
    if upper_rows:
        extra = np.zeros((len(upper_rows), transform.shape[1]))
        for i, (col, bound) in enumerate(upper_rows):
            extra[i, col] = 1.0
        A_std = np.vstack([A_std, extra])
        b_std = np.concatenate([b_std, [bound for _, bound in upper_rows]])
        senses_std += [LE] * len(upper_rows)
    cost = c @ transform
    n_rows, n_struct = A_std.shape
    # Nonnegative right-hand sides
    for i in range(n_rows):
        if b_std[i] < 0:
            A_std[i] = -A_std[i]
            b_std[i] = -b_std[i]
            senses_std[i] = _FLIPPED_SENSE[senses_std[i]]
    # Slack/surplus and artificial columns
    slack_rows = [i for i in range(n_rows) if senses_std[i] != EQ]
    art_rows = [i for i in range(n_rows) if senses_std[i] != LE]
    n_slack, n_art = len(slack_rows), len(art_rows)
    n_real = n_struct + n_slack
    tab = np.zeros((n_rows, n_real + n_art + 1))
    tab[:, :n_struct] = A_std
    tab[:, -1] = b_std
    basis = [-1] * n_rows
    for k, i in enumerate(slack_rows):
        tab[i, n_struct + k] = 1.0 if senses_std[i] == LE else -1.0
        if senses_std[i] == LE:
            basis[i] = n_struct + k
    for k, i in enumerate(art_rows):
        tab[i, n_real + k] = 1.0
        basis[i] = n_real + k
    iterations = 0
    # Phase 1: minimize the sum of artificials
    if n_art > 0:
        obj = np.zeros(tab.shape[1])
        obj[n_real:-1] = 1.0
        for i in art_rows:
            obj -= tab[i]
        _, it = _run_simplex(tab=tab, obj=obj, basis=basis)
        iterations += it
        infeasibility = -obj[-1]
        if infeasibility > FEASIBILITY_TOL * max(1.0, float(np.max(b_std))):
            logger.debug(f"-- LP infeasible, {infeasibility=:.3e}")
            return LpSolution(
                status=INFEASIBLE,
                x=np.full(n_vars, np.nan),
                objective_value=np.nan,
                iterations=iterations,
            )
        # Drive remaining artificials out of the basis, drop redundant rows
        redundant = []
        for i in range(n_rows):
            if basis[i] < n_real:
                continue
            candidates = np.abs(tab[i, :n_real])
            col = int(np.argmax(candidates))
            if candidates[col] > PIVOT_TOL:
                _pivot(tab=tab, obj=obj, row=i, col=col)
                basis[i] = col
            else:
                redundant.append(i)
        if redundant:
            logger.debug(f"-- Drop {len(redundant)} redundant LP rows")
            keep = [i for i in range(n_rows) if i not in redundant]
            tab = tab[keep]
            basis = [basis[i] for i in keep]
        tab = np.hstack([tab[:, :n_real], tab[:, -1:]])
    # Phase 2: original objective
    full_cost = np.zeros(n_real)
    full_cost[:n_struct] = cost
    obj = np.zeros(n_real + 1)
    obj[:-1] = full_cost
    for i, col in enumerate(basis):
        obj -= full_cost[col] * tab[i]
    status, it = _run_simplex(tab=tab, obj=obj, basis=basis)
    iterations += it
    logger.debug(f"-- LP {status} after {iterations} pivots")
    if status == UNBOUNDED:
        return LpSolution(
            status=UNBOUNDED,
            x=np.full(n_vars, np.nan),
            objective_value=-np.inf,
            iterations=iterations,
        )
    values = np.zeros(n_real)
    values[basis] = tab[:, -1]
    x = offset + transform @ values[:n_struct]
    return LpSolution(
        status=OPTIMAL,
        x=x,
        objective_value=float(c @ x),
        iterations=iterations,
    )


def solve_l1_box(
    matrix: Matrix,
    target: Vector,
    radius: Union[float, Vector],
    slope: float = 0.0,
) -> LpSolution:
    """min ||x||_1 s.t. |matrix @ x - target| <= radius + slope * ||x||_1

    Every l1-minimization program of the package has this shape. Variables are
    split as x = x+ - x-. With `slope` > 0 an auxiliary variable t carries
    sum(x+ + x-), which keeps the program linear. Rows with zero radius (and
    zero slope) become equalities.

    Args:
        matrix (Matrix): k x d constraint matrix
        target (Vector): k-vector
        radius (float or Vector): nonnegative, scalar or one per row
        slope (float): nonnegative weight on ||x||_1 in the radius

    Returns:
        LpSolution: with x the d-vector x+ - x-
    """
    matrix = np.asarray(matrix, dtype=float)
    target = np.asarray(target, dtype=float).reshape(-1)
    if matrix.ndim != 2 or matrix.shape[0] != target.size:
        raise DimensionError(f"{matrix.shape=} does not match {target.size=}")
    radius = np.broadcast_to(np.asarray(radius, dtype=float), target.shape)
    if np.any(radius < 0) or slope < 0:
        raise DomainError(f"Radius and slope must be nonnegative, {slope=}")
    n_rows, dim = matrix.shape
    split = np.hstack([matrix, -matrix])
    use_aux = slope > 0
    n_cols = 2 * dim + (1 if use_aux else 0)
    rows, rhs, senses = [], [], []
    for i in range(n_rows):
        base = np.zeros(n_cols)
        base[: 2 * dim] = split[i]
        if not use_aux and radius[i] == 0.0:
            rows.append(base)
            rhs.append(target[i])
            senses.append(EQ)
            continue
        upper_row = base.copy()
        lower_row = base.copy()
        if use_aux:
            upper_row[-1] = -slope
            lower_row[-1] = slope
        rows.append(upper_row)
        rhs.append(target[i] + radius[i])
        senses.append(LE)
        rows.append(lower_row)
        rhs.append(target[i] - radius[i])
        senses.append(GE)
    if use_aux:
        link = np.zeros(n_cols)
        link[: 2 * dim] = 1.0
        link[-1] = -1.0
        rows.append(link)
        rhs.append(0.0)
        senses.append(EQ)
    objective = np.zeros(n_cols)
    objective[: 2 * dim] = 1.0
    solution = solve_lp(
        LinearProgram(
            c=objective,
            A=np.array(rows).reshape(len(rows), n_cols),
            b=np.array(rhs),
            senses=tuple(senses),
        )
    )
    if solution.status != OPTIMAL:
        return LpSolution(
            status=solution.status,
            x=np.full(dim, np.nan),
            objective_value=solution.objective_value,
            iterations=solution.iterations,
        )
    x = solution.x[:dim] - solution.x[dim : 2 * dim]
    return LpSolution(
        status=OPTIMAL,
        x=x,
        objective_value=float(np.sum(np.abs(x))),
        iterations=solution.iterations,
    )
