"""
Many approximate means: t-statistics, moderate-deviation critical values and
moment diagnostics of the influence matrix
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from hdinfer.annotations import Alpha, ColIdx, Count, Vector
from hdinfer.datacl import MamProblem, TStats
from hdinfer.linalg_core import (
    DimensionError,
    DomainError,
    check_alpha,
    std_normal_quantile,
)


# ======
# Logger
# ======
logger = logging.getLogger(__name__)


# ==========
# Exceptions
# ==========
class DegenerateColumnError(Exception):
    """A column of the influence matrix has zero empirical second moment"""

    def __init__(self, column: ColIdx):
        self.column = column
        super().__init__(
            f"Influence column {column} has zero empirical second moment"
        )


# ====
# Core
# ====
def influence_scales(prob: MamProblem) -> Vector:
    """(E_n[Z_ij^2])^(1/2) per column

    Raises:
        DegenerateColumnError: on the first column with zero second moment
    """
    second_moments = prob.second_moments()
    degenerate = np.flatnonzero(second_moments <= 0.0)
    if degenerate.size > 0:
        raise DegenerateColumnError(column=int(degenerate[0]))
    return np.sqrt(second_moments)


def t_statistics(
    prob: MamProblem, null_values: Optional[Vector] = None
) -> TStats:
    """Self-normalized statistics sqrt(n)(theta_hat_j - null_j) / scale_j

    Args:
        prob (MamProblem): estimate and influence matrix
        null_values (Vector): hypothesized values, zeros if None

    Returns:
        TStats
    """
    if null_values is None:
        null_values = np.zeros(prob.p)
    null_values = np.asarray(null_values, dtype=float)
    if null_values.shape != (prob.p,):
        raise DimensionError(
            f"Expected {prob.p} null values, got {null_values.shape=}"
        )
    scale = influence_scales(prob)
    values = math.sqrt(prob.n) * (prob.theta_hat - null_values) / scale
    return TStats(values=values, scale=scale)


def moderate_deviation_critical(p: Count, alpha: Alpha) -> float:
    """Phi^-1(1 - alpha / p)"""
    check_alpha(alpha)
    if p < 1:
        raise DomainError(f"Need p >= 1, got {p=}")
    return std_normal_quantile(1.0 - alpha / p)


def maximal_diagnostic(
    prob: MamProblem, null_values: Optional[Vector] = None
) -> tuple:
    """Max |t_j| against the maximal-inequality level sqrt(2 log(p n))

    Returns:
        (max_abs_t, threshold)
    """
    t = t_statistics(prob=prob, null_values=null_values)
    threshold = math.sqrt(2.0 * math.log(prob.p * prob.n))
    return float(np.max(np.abs(t.values))), threshold


@dataclass(frozen=True)
class ConditionMReport:
    """Empirical moments of the influence columns"""

    min_second_moment: float
    max_third_abs_moment: float
    max_fourth_moment: float


def condition_m_diagnostics(prob: MamProblem) -> ConditionMReport:
    """min E_n[Z^2], max E_n[|Z|^3] and max E_n[Z^4] over columns

    Logs a warning when the smallest second moment is below 1.
    """
    abs_infl = np.abs(prob.influence)
    report = ConditionMReport(
        min_second_moment=float(np.min(np.mean(abs_infl**2, axis=0))),
        max_third_abs_moment=float(np.max(np.mean(abs_infl**3, axis=0))),
        max_fourth_moment=float(np.max(np.mean(abs_infl**4, axis=0))),
    )
    if report.min_second_moment < 1.0:
        logger.warning(
            "Smallest empirical second moment of the influence is"
            f" {report.min_second_moment:.4g} < 1; rescale before relying on"
            " moment bounds"
        )
    return report


def column_correlations(prob: MamProblem) -> np.ndarray:
    """Correlation matrix of the influence columns, from uncentered moments

    Uses E_n[Z_ij Z_ik] / (scale_j scale_k), matching the t-statistic scale.
    """
    scale = influence_scales(prob)
    cross = prob.influence.T @ prob.influence / prob.n
    return cross / np.outer(scale, scale)
