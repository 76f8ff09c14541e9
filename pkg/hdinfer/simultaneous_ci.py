"""
Simultaneous confidence rectangles for all coordinates of a MamProblem
"""
import logging
import math
from typing import Literal, Optional

import numpy as np

from hdinfer.annotations import Alpha, Matrix, Vector
from hdinfer.bootstrap import lambda_hat, make_weights, sup_draws
from hdinfer.datacl import (
    BootstrapConfig,
    MamProblem,
    SimultaneousBand,
    SupDraws,
)
from hdinfer.linalg_core import (
    DimensionError,
    DomainError,
    as_matrix,
    check_alpha,
    std_normal_quantile,
)


# ======
# Logger
# ======
logger = logging.getLogger(__name__)


# =========
# Constants
# =========
_L1_NORMALIZATION_TOL = 1e-10


# ====
# Core
# ====
def band_from_lambda(
    prob: MamProblem, weights: Vector, lam: float, method: str
) -> SimultaneousBand:
    """theta_hat_j -/+ lam / (w_j sqrt(n))"""
    radius = lam / (np.asarray(weights, dtype=float) * math.sqrt(prob.n))
    return SimultaneousBand(
        theta_hat=prob.theta_hat,
        lower=prob.theta_hat - radius,
        upper=prob.theta_hat + radius,
        lambda_used=float(lam),
        weights=np.asarray(weights, dtype=float),
        method=method,
    )


def simultaneous_intervals(
    prob: MamProblem,
    alpha: Alpha,
    weight_mode: Literal["unit", "inv_sd"],
    cfg: BootstrapConfig,
    draws: Optional[SupDraws] = None,
    n_jobs: int = 1,
) -> SimultaneousBand:
    """Bootstrap intervals theta_hat_j -/+ lambda_hat / (w_j sqrt(n))

    Args:
        prob (MamProblem): estimate and influence matrix
        alpha (float): 1 - nominal simultaneous coverage
        weight_mode (str): "unit" or "inv_sd"
        cfg (BootstrapConfig): scheme, number of draws and seed
        draws (SupDraws): reuse these draws instead of generating them; they
            must have been computed with the same weights
        n_jobs (int): joblib workers for the draws

    Returns:
        SimultaneousBand
    """
    check_alpha(alpha)
    weights = make_weights(prob=prob, weight_mode=weight_mode)
    if draws is None:
        draws = sup_draws(prob=prob, weights=weights, cfg=cfg, n_jobs=n_jobs)
    lam = lambda_hat(draws=draws, alpha=alpha)
    return band_from_lambda(
        prob=prob,
        weights=weights,
        lam=lam,
        method=f"{draws.scheme}_bootstrap",
    )


def simultaneous_intervals_md(
    prob: MamProblem, alpha: Alpha
) -> SimultaneousBand:
    """Moderate-deviation intervals with radius
    Phi^-1(1 - alpha/(2p)) (E_n[Z_ij^2])^(1/2) / sqrt(n)
    """
    check_alpha(alpha)
    weights = make_weights(prob=prob, weight_mode="inv_sd")
    lam = std_normal_quantile(1.0 - alpha / (2.0 * prob.p))
    return band_from_lambda(
        prob=prob, weights=weights, lam=lam, method="moderate_deviation"
    )


def functional_intervals(
    prob: MamProblem,
    loadings: Matrix,
    alpha: Alpha,
    weight_mode: Literal["unit", "inv_sd"],
    cfg: BootstrapConfig,
) -> SimultaneousBand:
    """Simultaneous intervals for the k linear functionals A theta_0

    Each row of A has l1 norm 1, so (A theta_hat, Z A') is again a problem of
    many approximate means.
    """
    loadings = as_matrix(loadings, name="loadings")
    if loadings.shape[1] != prob.p:
        raise DimensionError(
            f"loadings need {prob.p} columns, got {loadings.shape=}"
        )
    row_l1 = np.sum(np.abs(loadings), axis=1)
    if np.any(np.abs(row_l1 - 1.0) > _L1_NORMALIZATION_TOL):
        raise DomainError("Each loading row must have l1 norm 1")
    functional_prob = MamProblem(
        theta_hat=loadings @ prob.theta_hat,
        influence=prob.influence @ loadings.T,
    )
    return simultaneous_intervals(
        prob=functional_prob, alpha=alpha, weight_mode=weight_mode, cfg=cfg
    )


def band_covers(band: SimultaneousBand, theta0: Vector) -> bool:
    """True when every coordinate of theta0 lies in the band"""
    theta0 = np.asarray(theta0, dtype=float)
    return bool(np.all((band.lower <= theta0) & (theta0 <= band.upper)))
