"""
Regularized minimum distance (RMD / RGMM) estimation

min ||theta||_1 s.t. ||g_hat(theta)||_inf <= lambda, solved exactly by linear
programming for linear moments and by sequential linearization otherwise.
Also holds the moment models and the identifiability diagnostics.
"""
import itertools
import logging
import math
from abc import ABC, abstractmethod
from typing import Callable, Optional

import numpy as np
from scipy import special

from hdinfer.annotations import Count, Lambda, Matrix, Vector
from hdinfer.datacl import IdentifiabilityReport, RmdConfig, RmdResult
from hdinfer.linalg_core import (
    DimensionError,
    DomainError,
    as_matrix,
    as_vector,
    max_row_l1,
)
from hdinfer.lp_solver import OPTIMAL, solve_l1_box


# ======
# Logger
# ======
logger = logging.getLogger(__name__)


# =========
# Constants
# =========
FEASIBILITY_SLACK = 1e-8
SPARSE_SV_BUDGET = 1_000_000
MAX_ITERATIONS = "max_iterations"
INFEASIBLE = "infeasible"


# ==========
# Exceptions
# ==========
class CombinatorialBudgetError(Exception):
    """Too many submatrices to enumerate"""

    pass


# ============
# Score models
# ============
class ScoreModel(ABC):
    """Moment model g(X, theta) with m moments and p parameters

    Subclasses provide the averaged moments and their Jacobian. Models built
    on observations also provide the n x m per-observation scores.
    """

    m: Count
    p: Count

    @abstractmethod
    def moments(self, theta: Vector) -> Vector:
        """g_hat(theta) = E_n[g(X, theta)]"""

    @abstractmethod
    def jacobian(self, theta: Vector) -> Matrix:
        """G_hat(theta), m x p"""

    def scores(self, theta: Vector) -> Matrix:
        """Per-observation g(X_i, theta), n x m"""
        raise NotImplementedError(
            f"{type(self).__name__} has no per-observation scores"
        )

    @property
    def is_linear(self) -> bool:
        return False

    def _check_theta(self, theta: Vector) -> Vector:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.p,):
            raise DimensionError(
                f"Expected {self.p} parameters, {theta.shape=}"
            )
        return theta


class LinearScore(ScoreModel):
    """g_hat(theta) = G_hat theta + g0_hat"""

    def __init__(self, G_hat: Matrix, g0_hat: Vector):
        self.G_hat = as_matrix(G_hat, name="G_hat")
        self.g0_hat = as_vector(g0_hat, name="g0_hat")
        if self.G_hat.shape[0] != self.g0_hat.size:
            raise DimensionError(
                f"{self.G_hat.shape=} does not match {self.g0_hat.size=}"
            )
        self.m, self.p = self.G_hat.shape

    @property
    def is_linear(self) -> bool:
        return True

    def moments(self, theta: Vector) -> Vector:
        return self.G_hat @ self._check_theta(theta) + self.g0_hat

    def jacobian(self, theta: Vector) -> Matrix:
        return self.G_hat


class LinearIVScore(LinearScore):
    """g(X_i, theta) = (y_i - W_i' theta) Z_i

    Z = W gives the regression moments behind the Dantzig selector.
    """

    def __init__(self, y: Vector, W: Matrix, Z: Matrix):
        self.y = as_vector(y, name="y")
        self.W = as_matrix(W, name="W")
        self.Z = as_matrix(Z, name="Z")
        n = self.y.size
        if self.W.shape[0] != n or self.Z.shape[0] != n:
            raise DimensionError(
                f"Row counts disagree: {n=}, {self.W.shape=}, {self.Z.shape=}"
            )
        super().__init__(
            G_hat=-(self.Z.T @ self.W) / n, g0_hat=self.Z.T @ self.y / n
        )

    @property
    def n(self) -> Count:
        return self.y.size

    def scores(self, theta: Vector) -> Matrix:
        residuals = self.y - self.W @ self._check_theta(theta)
        return residuals[:, None] * self.Z


class NonlinearIVScore(ScoreModel):
    """g(X_i, theta) = f(y_i, W_i' theta) Z_i

    Args:
        link: f(y, index), vectorized over observations
        link_derivative: derivative of f in its index argument
    """

    def __init__(
        self,
        y: Vector,
        W: Matrix,
        Z: Matrix,
        link: Callable[[np.ndarray, np.ndarray], np.ndarray],
        link_derivative: Callable[[np.ndarray, np.ndarray], np.ndarray],
    ):
        self.y = as_vector(y, name="y")
        self.W = as_matrix(W, name="W")
        self.Z = as_matrix(Z, name="Z")
        n = self.y.size
        if self.W.shape[0] != n or self.Z.shape[0] != n:
            raise DimensionError(
                f"Row counts disagree: {n=}, {self.W.shape=}, {self.Z.shape=}"
            )
        self.link = link
        self.link_derivative = link_derivative
        self.m = self.Z.shape[1]
        self.p = self.W.shape[1]

    @property
    def n(self) -> Count:
        return self.y.size

    def scores(self, theta: Vector) -> Matrix:
        index = self.W @ self._check_theta(theta)
        return self.link(self.y, index)[:, None] * self.Z

    def moments(self, theta: Vector) -> Vector:
        return np.mean(self.scores(theta), axis=0)

    def jacobian(self, theta: Vector) -> Matrix:
        index = self.W @ self._check_theta(theta)
        slopes = self.link_derivative(self.y, index)
        return (self.Z * slopes[:, None]).T @ self.W / self.n


def _logistic_residual(y: np.ndarray, index: np.ndarray) -> np.ndarray:
    return y - special.expit(index)


def _logistic_residual_derivative(
    y: np.ndarray, index: np.ndarray
) -> np.ndarray:
    prob = special.expit(index)
    return -prob * (1.0 - prob)


class LogisticScore(NonlinearIVScore):
    """g(X_i, theta) = (y_i - Lambda(W_i' theta)) W_i with Lambda = expit"""

    def __init__(self, y: Vector, W: Matrix):
        super().__init__(
            y=y,
            W=W,
            Z=W,
            link=_logistic_residual,
            link_derivative=_logistic_residual_derivative,
        )


# ==========
# Estimators
# ==========
def _excess(score: ScoreModel, theta: Vector, lam: Lambda) -> float:
    return float(np.max(np.abs(score.moments(theta)))) - lam


def rmd_linear(score: LinearScore, lam: Lambda) -> RmdResult:
    """min ||theta||_1 s.t. -lam <= G_hat theta + g0_hat <= lam

    Infeasibility is a status; callers decide on a fallback.
    """
    if lam < 0:
        raise DomainError(f"lambda must be nonnegative, got {lam=}")
    solution = solve_l1_box(
        matrix=score.G_hat, target=-score.g0_hat, radius=lam
    )
    if solution.status != OPTIMAL:
        return RmdResult(
            theta_hat=np.zeros(score.p), status=INFEASIBLE, iterations=1
        )
    return RmdResult(
        theta_hat=solution.x,
        status=OPTIMAL,
        iterations=1,
        constraint_excess=_excess(score, solution.x, lam),
    )


def rmd_nonlinear(
    score: ScoreModel, cfg: RmdConfig, theta_init: Optional[Vector] = None
) -> RmdResult:
    """RMD for nonlinear moments by sequential linearization

    Each iteration solves the linear program for the moments linearized at the
    current point. Stops once the step is below `cfg.tol` (or the
    linearization is exact at the new point) and the exact moments satisfy
    ||g_hat(theta)||_inf <= lambda + 1e-8.

    Args:
        score (ScoreModel): moments and Jacobian
        cfg (RmdConfig): lambda, iteration cap and tolerance
        theta_init (Vector): starting point, zeros if None

    Returns:
        RmdResult: status "optimal", "infeasible" or "max_iterations"
    """
    theta = (
        np.zeros(score.p)
        if theta_init is None
        else as_vector(theta_init, name="theta_init")
    )
    excess = np.nan
    for iteration in range(1, cfg.max_outer_iterations + 1):
        jac = score.jacobian(theta)
        offset = score.moments(theta) - jac @ theta
        step_result = rmd_linear(
            score=LinearScore(G_hat=jac, g0_hat=offset), lam=cfg.lam
        )
        if step_result.status != OPTIMAL:
            logger.warning(f"Linearized RMD infeasible at {iteration=}")
            return RmdResult(
                theta_hat=theta, status=INFEASIBLE, iterations=iteration
            )
        new_theta = step_result.theta_hat
        step = float(np.max(np.abs(new_theta - theta)))
        new_moments = score.moments(new_theta)
        new_jac = score.jacobian(new_theta)
        exact_linearization = np.allclose(
            new_moments, jac @ new_theta + offset, rtol=0, atol=cfg.tol
        ) and np.allclose(new_jac, jac, rtol=0, atol=cfg.tol)
        theta = new_theta
        excess = float(np.max(np.abs(new_moments))) - cfg.lam
        if (step < cfg.tol or exact_linearization) and (
            excess <= FEASIBILITY_SLACK
        ):
            return RmdResult(
                theta_hat=theta,
                status=OPTIMAL,
                iterations=iteration,
                constraint_excess=excess,
            )
    logger.warning(
        f"Nonlinear RMD stopped after {cfg.max_outer_iterations} iterations,"
        f" constraint excess {excess:.3e}"
    )
    return RmdResult(
        theta_hat=theta,
        status=MAX_ITERATIONS,
        iterations=cfg.max_outer_iterations,
        constraint_excess=excess,
    )


def iv_rmd(Z: Matrix, W: Matrix, y: Vector, lam: Lambda) -> RmdResult:
    """RMD on the IV moments E_n[(y - W' theta) Z]"""
    return rmd_linear(score=LinearIVScore(y=y, W=W, Z=Z), lam=lam)


def dantzig_regression(W: Matrix, y: Vector, lam: Lambda) -> RmdResult:
    """Dantzig selector, i.e. RMD on E_n[(y - W' theta) W]"""
    return iv_rmd(Z=W, W=W, y=y, lam=lam)


# ===============
# Identifiability
# ===============
def _smallest_singular_values(blocks: np.ndarray) -> np.ndarray:
    """min ||A v|| over unit v for a stack of blocks (0 if rows < cols)"""
    n_rows, n_cols = blocks.shape[1], blocks.shape[2]
    if n_rows < n_cols:
        return np.zeros(blocks.shape[0])
    return np.linalg.svd(blocks, compute_uv=False)[:, -1]


def sparse_singular_values(G: Matrix, l: Count) -> tuple:
    """l-sparse smallest and largest singular values of G

    sigma_min(l) = min_{|H|<=l} max_{|J|<=l} sigma_min(G[J, H])
    sigma_max(l) = max_{|H|<=l} max_{|J|<=l} sigma_max(G[J, H])

    Adding rows never lowers sigma_min and adding columns never raises it, so
    both extrema are reached on l x l blocks (or the largest available).

    Raises:
        CombinatorialBudgetError: when C(p, l) C(m, l) exceeds 1e6
    """
    G = as_matrix(G, name="G")
    if l < 1:
        raise DomainError(f"Need l >= 1, got {l=}")
    m, p = G.shape
    n_cols, n_rows = min(l, p), min(l, m)
    n_blocks = math.comb(p, n_cols) * math.comb(m, n_rows)
    if n_blocks > SPARSE_SV_BUDGET:
        raise CombinatorialBudgetError(
            f"{n_blocks} submatrices exceed the budget of {SPARSE_SV_BUDGET}"
        )
    row_sets = [
        list(rows) for rows in itertools.combinations(range(m), n_rows)
    ]
    sigma_min, sigma_max = np.inf, 0.0
    for cols in itertools.combinations(range(p), n_cols):
        sub = G[:, list(cols)]
        blocks = np.stack([sub[rows] for rows in row_sets])
        singular = np.linalg.svd(blocks, compute_uv=False)
        sigma_max = max(sigma_max, float(np.max(singular)))
        best = float(np.max(_smallest_singular_values(blocks)))
        sigma_min = min(sigma_min, best)
    return sigma_min, sigma_max


def identifiability_lower_bound(s: Count, mu_n: float, q: int) -> float:
    """s^(-1/q) mu_n, lower bound on the identifiability factor in l_q"""
    if s < 1:
        raise DomainError(f"Need s >= 1, got {s=}")
    if not (0.0 < mu_n <= 1.0):
        raise DomainError(f"mu_n must lie in (0, 1], got {mu_n=}")
    if q not in (1, 2):
        raise DomainError(f"q must be 1 or 2, got {q=}")
    return s ** (-1.0 / q) * mu_n


def identifiability_report(
    G: Matrix, s: Count, l: Optional[Count] = None
) -> IdentifiabilityReport:
    """Sparse singular values at level l (default s), mu_n and the bounds

    mu_n is taken as min(sigma_min(l)^2 / sigma_max(l)^2, 1).
    """
    G = as_matrix(G, name="G")
    level = s if l is None else l
    sigma_min, sigma_max = sparse_singular_values(G=G, l=level)
    mu_n = min((sigma_min / sigma_max) ** 2, 1.0) if sigma_max > 0 else 0.0
    if mu_n > 0:
        bound_l1 = identifiability_lower_bound(s=s, mu_n=mu_n, q=1)
        bound_l2 = identifiability_lower_bound(s=s, mu_n=mu_n, q=2)
    else:
        logger.warning(f"sigma_min({level}) is 0: no identifiability bound")
        bound_l1 = bound_l2 = 0.0
    return IdentifiabilityReport(
        l=level,
        s=s,
        sigma_min_l=sigma_min,
        sigma_max_l=sigma_max,
        mu_n=mu_n,
        lower_bound_l1=bound_l1,
        lower_bound_l2=bound_l2,
        L_n=max_row_l1(G),
    )
