"""
Double/debiased regularized GMM

theta_check = theta_hat - mu_hat gamma_hat g_hat(theta_hat), where gamma_hat
estimates the moment selection matrix G' Omega^-1 and mu_hat the inverse of
gamma G, both row by row through l1-minimization programs.
"""
import logging
import math
from dataclasses import dataclass
from typing import Literal, Optional, Union

import numpy as np

from hdinfer.annotations import Count, Matrix, Vector
from hdinfer.datacl import (
    DrgmmResult,
    GammaEstimate,
    GmmPlugins,
    MuEstimate,
    OrthogonalScoreStat,
    RemainderReport,
    RmdConfig,
)
from hdinfer.linalg_core import (
    DimensionError,
    DomainError,
    as_matrix,
    as_vector,
    max_abs,
    max_row_l1,
    std_normal_quantile,
)
from hdinfer.lp_solver import OPTIMAL, solve_l1_box
from hdinfer.rmd import ScoreModel, rmd_linear, rmd_nonlinear


# ======
# Logger
# ======
logger = logging.getLogger(__name__)


# =========
# Constants
# =========
_RIDGE_SCALE = 1e-10
_MAX_CONDITION = 1.0 / np.finfo(float).eps
DEFAULT_PENALTY_C = 0.5
FIXED = "fixed"
ADAPTIVE = "adaptive"


# ==========
# Exceptions
# ==========
class SingularMatrixError(Exception):
    """Matrix stays numerically singular after the ridge"""

    pass


class DrgmmStageError(Exception):
    """A step of the DRGMM pipeline failed"""

    pass


# ======
# Inputs
# ======
@dataclass(frozen=True)
class AdaptivePenalty:
    """Scales l^Omega and l^G of the self-tuning constraints, and n"""

    n: Count
    ell_omega: float
    ell_g: float

    def __post_init__(self):
        if self.n < 1 or self.ell_omega < 0 or self.ell_g < 0:
            raise DomainError(
                f"Invalid adaptive penalty {self.n=}, {self.ell_omega=},"
                f" {self.ell_g=}"
            )


@dataclass(frozen=True)
class RemainderOracle:
    """Truth used by the simulation-only remainder diagnostics"""

    theta0: Vector
    gamma0: Matrix
    mu0: Matrix


# ========
# Plug-ins
# ========
def plugin_G_Omega(score: ScoreModel, theta_hat: Vector) -> GmmPlugins:
    """G_hat = dg_hat/dtheta' at theta_hat and Omega_hat = E_n[g g']"""
    G_hat = score.jacobian(theta_hat)
    scores = score.scores(theta_hat)
    omega = scores.T @ scores / scores.shape[0]
    return GmmPlugins(G_hat=G_hat, Omega_hat=(omega + omega.T) / 2.0)


def default_penalties(
    n: Count, p: Count, m: Count, c: float = DEFAULT_PENALTY_C
) -> tuple:
    """(lambda^gamma, lambda^mu) = (lbar, 2 lbar) per row

    lbar = c n^-1/2 Phi^-1(1 - 1/(p m n))
    """
    lbar = c * std_normal_quantile(1.0 - 1.0 / (p * m * n)) / math.sqrt(n)
    return np.full(p, lbar), np.full(p, 2.0 * lbar)


def _row_penalties(penalties: Union[float, Vector, None], p: Count) -> Vector:
    if penalties is None:
        raise DomainError("Fixed mode needs penalties")
    penalties = np.broadcast_to(np.asarray(penalties, dtype=float), (p,))
    if np.any(penalties < 0):
        raise DomainError("Penalties must be nonnegative")
    return penalties.copy()


def _solve_rows(
    matrix: Matrix,
    targets: Matrix,
    radii: Vector,
    slope: float,
    label: str,
) -> tuple:
    """One l1 program per row target; infeasible rows fall back to zero"""
    n_rows, dim = targets.shape[0], matrix.shape[1]
    estimate = np.zeros((n_rows, dim))
    statuses = []
    for j in range(n_rows):
        solution = solve_l1_box(
            matrix=matrix, target=targets[j], radius=radii[j], slope=slope
        )
        statuses.append(solution.status)
        if solution.status == OPTIMAL:
            estimate[j] = solution.x
        else:
            logger.warning(f"{label} row {j} is {solution.status}; use zero")
    return estimate, tuple(statuses)


# =====
# gamma
# =====
def estimate_gamma(
    plugins: GmmPlugins,
    penalties: Union[float, Vector, None] = None,
    mode: Literal["fixed", "adaptive"] = FIXED,
    adaptive: Optional[AdaptivePenalty] = None,
) -> GammaEstimate:
    """Rows min ||gamma_j||_1 s.t. ||gamma_j Omega_hat - G_hat._j||_inf <= r_j

    Fixed mode: r_j = penalties_j. Adaptive mode:
    r_j = ||gamma_j||_1 n^-1/2 l^Omega + n^-1/2 l^G, and the reported penalty
    is r_j evaluated at the solution.
    """
    p = plugins.p
    omega_t = plugins.Omega_hat.T
    targets = plugins.G_hat.T
    if mode == FIXED:
        radii = _row_penalties(penalties, p)
        gamma_hat, statuses = _solve_rows(
            omega_t, targets, radii, slope=0.0, label="gamma"
        )
        return GammaEstimate(
            gamma_hat=gamma_hat, penalties=radii, statuses=statuses
        )
    if mode != ADAPTIVE or adaptive is None:
        raise DomainError(f"{mode=} needs an AdaptivePenalty in adaptive mode")
    root_n = math.sqrt(adaptive.n)
    slope = adaptive.ell_omega / root_n
    radii = np.full(p, adaptive.ell_g / root_n)
    gamma_hat, statuses = _solve_rows(
        omega_t, targets, radii, slope=slope, label="gamma"
    )
    effective = radii + slope * np.sum(np.abs(gamma_hat), axis=1)
    return GammaEstimate(
        gamma_hat=gamma_hat, penalties=effective, statuses=statuses
    )


# ==
# mu
# ==
def estimate_mu(
    gamma: GammaEstimate,
    plugins: GmmPlugins,
    penalties: Union[float, Vector, None] = None,
    mode: Literal["fixed", "adaptive"] = FIXED,
    adaptive: Optional[AdaptivePenalty] = None,
) -> MuEstimate:
    """Rows min ||mu_j||_1 s.t. ||mu_j gamma_hat G_hat - e_j'||_inf <= r_j

    Fixed mode: r_j = penalties_j. Adaptive mode: r_j = ||mu_j||_1 lambda^mu
    with lambda^mu = 2 Kg n^-1/2 l^G + Kg^2 n^-1/2 l^Omega
    + Kg ||lambda^gamma||_inf and Kg = max_j ||gamma_hat_j||_1.
    """
    p = plugins.p
    gamma_g = gamma.gamma_hat @ plugins.G_hat
    targets = np.eye(p)
    if mode == FIXED:
        radii = _row_penalties(penalties, p)
        mu_hat, statuses = _solve_rows(
            gamma_g.T, targets, radii, slope=0.0, label="mu"
        )
        return MuEstimate(mu_hat=mu_hat, penalties=radii, statuses=statuses)
    if mode != ADAPTIVE or adaptive is None:
        raise DomainError(f"{mode=} needs an AdaptivePenalty in adaptive mode")
    root_n = math.sqrt(adaptive.n)
    gamma_l1 = max_row_l1(gamma.gamma_hat)
    slope = (
        2.0 * gamma_l1 * adaptive.ell_g / root_n
        + gamma_l1**2 * adaptive.ell_omega / root_n
        + gamma_l1 * float(np.max(gamma.penalties))
    )
    mu_hat, statuses = _solve_rows(
        gamma_g.T, targets, np.zeros(p), slope=slope, label="mu"
    )
    effective = slope * np.sum(np.abs(mu_hat), axis=1)
    return MuEstimate(mu_hat=mu_hat, penalties=effective, statuses=statuses)


# =========
# Debiasing
# =========
def debias(
    theta_hat: Vector,
    mu: MuEstimate,
    gamma: GammaEstimate,
    g_hat_at_theta: Vector,
) -> Vector:
    """theta_hat - mu_hat gamma_hat g_hat(theta_hat)"""
    theta_hat = as_vector(theta_hat, name="theta_hat")
    g_hat_at_theta = as_vector(g_hat_at_theta, name="g_hat_at_theta")
    if gamma.gamma_hat.shape[1] != g_hat_at_theta.size or mu.mu_hat.shape != (
        theta_hat.size,
        gamma.gamma_hat.shape[0],
    ):
        raise DimensionError(
            f"{mu.mu_hat.shape=}, {gamma.gamma_hat.shape=},"
            f" {g_hat_at_theta.size=} and {theta_hat.size=} disagree"
        )
    return theta_hat - mu.mu_hat @ (gamma.gamma_hat @ g_hat_at_theta)


def _ridge_inverse(matrix: Matrix, label: str) -> Matrix:
    dim = matrix.shape[0]
    ridge = _RIDGE_SCALE * np.trace(matrix) / dim
    regularized = matrix + ridge * np.eye(dim)
    condition = np.linalg.cond(regularized)
    if not np.isfinite(condition) or condition > _MAX_CONDITION:
        raise SingularMatrixError(
            f"{label} is singular after a ridge {ridge=}"
        )
    return np.linalg.inv(regularized)


def asymptotic_variance(G: Matrix, Omega: Matrix) -> Matrix:
    """V = (G' Omega^-1 G)^-1

    Both inversions add a ridge 1e-10 trace(.)/dim to the diagonal. Only used
    to report V_hat; gamma_hat never inverts Omega_hat.
    """
    G = as_matrix(G, name="G")
    Omega = as_matrix(Omega, name="Omega")
    if Omega.shape != (G.shape[0], G.shape[0]):
        raise DimensionError(f"{Omega.shape=} does not match {G.shape=}")
    precision = G.T @ _ridge_inverse(Omega, label="Omega") @ G
    precision = (precision + precision.T) / 2.0
    variance = _ridge_inverse(precision, label="G' Omega^-1 G")
    return (variance + variance.T) / 2.0


# ===========
# Diagnostics
# ===========
def remainder_bounds(
    mu: MuEstimate,
    gamma: GammaEstimate,
    G_hat: Matrix,
    G_tilde: Matrix,
    theta_hat: Vector,
    theta0: Vector,
    g_hat_at_theta0: Vector,
    gamma0: Matrix,
    mu0: Matrix,
    n: Count,
) -> RemainderReport:
    """Upper bounds r1, r2, r3 on the linearization errors of theta_check

    r1 = sqrt(n) |I - mu gamma G_hat|_max ||theta_hat - theta0||_1
    r2 = sqrt(n) max||mu_j||_1 max||gamma_j||_1 |G_hat - G_tilde|_max
         ||theta_hat - theta0||_1
    r3 = (max||mu_j||_1 max||gamma_j - gamma0_j||_1
          + max||mu_j - mu0_j||_1 max||gamma0_j||_1)
         ||sqrt(n) g_hat(theta0)||_inf
    """
    mu_hat, gamma_hat = mu.mu_hat, gamma.gamma_hat
    if G_hat.shape != G_tilde.shape or gamma_hat.shape != gamma0.shape:
        raise DimensionError("G_hat/G_tilde or gamma_hat/gamma0 shapes differ")
    if mu_hat.shape != mu0.shape:
        raise DimensionError(f"{mu_hat.shape=} differs from {mu0.shape=}")
    p = mu_hat.shape[0]
    root_n = math.sqrt(n)
    theta_err = float(np.sum(np.abs(np.asarray(theta_hat) - theta0)))
    score_sup = root_n * float(np.max(np.abs(g_hat_at_theta0)))
    r1 = root_n * max_abs(np.eye(p) - mu_hat @ gamma_hat @ G_hat) * theta_err
    r2 = (
        root_n
        * max_row_l1(mu_hat)
        * max_row_l1(gamma_hat)
        * max_abs(G_hat - G_tilde)
        * theta_err
    )
    r3 = (
        max_row_l1(mu_hat) * max_row_l1(gamma_hat - gamma0) * score_sup
        + max_row_l1(mu_hat - mu0) * max_row_l1(gamma0) * score_sup
    )
    return RemainderReport(r1=r1, r2=r2, r3=r3)


def orthogonal_score(
    xi: Matrix,
    plugins: GmmPlugins,
    mu: MuEstimate,
    gamma: GammaEstimate,
    g_hat_alpha_theta: Vector,
    n: Count,
    scores_alpha_theta: Optional[Matrix] = None,
) -> OrthogonalScoreStat:
    """sqrt(n) (xi - xi G_hat mu gamma) g_hat(alpha_0, theta_hat) and
    V_M = P Omega_hat P' with P = xi - xi G_hat mu gamma

    When the n x m per-observation moments are given, their projections
    g(X_i) P' are returned as influence rows for the bootstrap.
    """
    xi = as_matrix(xi, name="xi")
    g_hat_alpha_theta = as_vector(g_hat_alpha_theta, name="g_hat")
    if xi.shape[1] != plugins.m or g_hat_alpha_theta.size != plugins.m:
        raise DimensionError(
            f"{xi.shape=} and {g_hat_alpha_theta.size=} need"
            f" {plugins.m} moments"
        )
    projection = xi - xi @ plugins.G_hat @ mu.mu_hat @ gamma.gamma_hat
    influence = None
    if scores_alpha_theta is not None:
        influence = as_matrix(scores_alpha_theta) @ projection.T
    return OrthogonalScoreStat(
        xi=xi,
        statistic=math.sqrt(n) * projection @ g_hat_alpha_theta,
        V_M_hat=projection @ plugins.Omega_hat @ projection.T,
        influence=influence,
    )


# ========
# Pipeline
# ========
def drgmm_pipeline(
    score: ScoreModel,
    rmd_cfg: RmdConfig,
    gamma_penalties: Union[float, Vector, None] = None,
    mu_penalties: Union[float, Vector, None] = None,
    mode: Literal["fixed", "adaptive"] = FIXED,
    adaptive: Optional[AdaptivePenalty] = None,
    gamma_omega: Optional[Matrix] = None,
    penalty_c: float = DEFAULT_PENALTY_C,
    theta_init: Optional[Vector] = None,
    oracle: Optional[RemainderOracle] = None,
) -> DrgmmResult:
    """Steps 1-5: RMD, plug-ins, gamma_hat, mu_hat, debiasing

    Args:
        score (ScoreModel): model with per-observation scores
        rmd_cfg (RmdConfig): lambda of step 1
        gamma_penalties, mu_penalties: fixed-mode penalties; when both are
            None, `default_penalties` with constant `penalty_c` is used
        mode (str): "fixed" or "adaptive" penalties for gamma and mu
        adaptive (AdaptivePenalty): scales for the adaptive mode
        gamma_omega (Matrix): Omega used for gamma_hat instead of Omega_hat,
            e.g. E_n[Z Z'] in homoskedastic IV
        theta_init (Vector): starting point of nonlinear RMD
        oracle (RemainderOracle): truth for the remainder diagnostics

    Returns:
        DrgmmResult

    Raises:
        DrgmmStageError: labelled with the failing step
    """
    try:
        if score.is_linear:
            rmd_result = rmd_linear(score=score, lam=rmd_cfg.lam)
        else:
            rmd_result = rmd_nonlinear(
                score=score, cfg=rmd_cfg, theta_init=theta_init
            )
    except Exception as e:
        raise DrgmmStageError(f"[step 1: rmd] {e}") from e
    theta_hat = rmd_result.theta_hat
    if rmd_result.status == "infeasible":
        logger.warning("RMD infeasible, continue with theta_hat = 0")
        theta_hat = np.zeros(score.p)
    try:
        plugins = plugin_G_Omega(score=score, theta_hat=theta_hat)
        scores = score.scores(theta_hat)
    except Exception as e:
        raise DrgmmStageError(f"[step 2: plug-ins] {e}") from e
    n = scores.shape[0]
    if mode == FIXED and gamma_penalties is None and mu_penalties is None:
        gamma_penalties, mu_penalties = default_penalties(
            n=n, p=plugins.p, m=plugins.m, c=penalty_c
        )
    gamma_plugins = (
        plugins
        if gamma_omega is None
        else GmmPlugins(G_hat=plugins.G_hat, Omega_hat=as_matrix(gamma_omega))
    )
    try:
        gamma = estimate_gamma(
            plugins=gamma_plugins,
            penalties=gamma_penalties,
            mode=mode,
            adaptive=adaptive,
        )
    except Exception as e:
        raise DrgmmStageError(f"[step 3: gamma] {e}") from e
    try:
        mu = estimate_mu(
            gamma=gamma,
            plugins=plugins,
            penalties=mu_penalties,
            mode=mode,
            adaptive=adaptive,
        )
    except Exception as e:
        raise DrgmmStageError(f"[step 4: mu] {e}") from e
    try:
        theta_check = debias(
            theta_hat=theta_hat,
            mu=mu,
            gamma=gamma,
            g_hat_at_theta=scores.mean(axis=0),
        )
        influence = scores @ (mu.mu_hat @ gamma.gamma_hat).T
        V_hat = asymptotic_variance(G=plugins.G_hat, Omega=plugins.Omega_hat)
    except Exception as e:
        raise DrgmmStageError(f"[step 5: debias] {e}") from e
    remainder = None
    if oracle is not None:
        remainder = remainder_bounds(
            mu=mu,
            gamma=gamma,
            G_hat=plugins.G_hat,
            G_tilde=score.jacobian(oracle.theta0),
            theta_hat=theta_hat,
            theta0=oracle.theta0,
            g_hat_at_theta0=score.moments(oracle.theta0),
            gamma0=oracle.gamma0,
            mu0=oracle.mu0,
            n=n,
        )
    return DrgmmResult(
        theta_hat=theta_hat,
        theta_check=theta_check,
        scores=influence,
        V_hat=V_hat,
        gamma=gamma,
        mu=mu,
        rmd_status=rmd_result.status,
        remainder=remainder,
    )
