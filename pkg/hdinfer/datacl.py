"""
Dataclasses shared across modules, and their conversions to tables
"""
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
import pandas as pd

from hdinfer.annotations import Count, Matrix, Seed, Vector
from hdinfer.linalg_core import (
    DimensionError,
    DomainError,
    as_matrix,
    as_vector,
)


# ======================
# Many approximate means
# ======================
@dataclass(frozen=True)
class MamProblem:
    """Estimate and estimated influence matrix

    Attributes
        theta_hat (Vector): p-vector estimate
        influence (Matrix): n x p matrix whose rows are the estimated
            influence functions
    """

    theta_hat: Vector
    influence: Matrix

    def __post_init__(self):
        theta_hat = as_vector(self.theta_hat, name="theta_hat")
        influence = as_matrix(self.influence, name="influence")
        if influence.shape[1] != theta_hat.size:
            raise DimensionError(
                f"influence has {influence.shape[1]} columns for"
                f" {theta_hat.size} estimates"
            )
        object.__setattr__(self, "theta_hat", theta_hat)
        object.__setattr__(self, "influence", influence)

    @property
    def n(self) -> Count:
        return self.influence.shape[0]

    @property
    def p(self) -> Count:
        return self.theta_hat.size

    def second_moments(self) -> Vector:
        """Uncentered E_n[Z_ij^2] per column"""
        return np.mean(np.square(self.influence), axis=0)


@dataclass(frozen=True)
class TStats:
    """Self-normalized statistics and their scales (E_n[Z_ij^2])^(1/2)"""

    values: Vector
    scale: Vector


# =========
# Bootstrap
# =========
@dataclass(frozen=True)
class BootstrapConfig:
    """Bootstrap scheme, number of draws and seed"""

    scheme: Literal["gaussian", "empirical"] = "gaussian"
    B: Count = 1000
    seed: Seed = 0

    def __post_init__(self):
        if self.scheme not in ("gaussian", "empirical"):
            raise DomainError(f"Unknown bootstrap scheme {self.scheme=}")
        if self.B < 1:
            raise DomainError(f"Need at least one draw, got {self.B=}")


@dataclass(frozen=True)
class SupDraws:
    """B bootstrap draws of the weighted sup statistic"""

    values: Vector
    scheme: str


# =========
# Intervals
# =========
@dataclass(frozen=True)
class SimultaneousBand:
    """Rectangle [lower, upper] around theta_hat

    radius_j = lambda_used / (weights_j * sqrt(n))
    """

    theta_hat: Vector
    lower: Vector
    upper: Vector
    lambda_used: float
    weights: Vector
    method: Literal[
        "gaussian_bootstrap", "empirical_bootstrap", "moderate_deviation"
    ]

    @property
    def radius(self) -> Vector:
        return self.upper - self.theta_hat


# =======
# Testing
# =======
@dataclass(frozen=True)
class FwerStep:
    """One pass of a stepdown: active set, critical value, new rejections"""

    active: tuple
    critical_value: float
    rejected: tuple


@dataclass(frozen=True)
class FwerResult:
    """Rejections of a FWER-controlling procedure

    `rejected` is the complement of `final_active` in {0, ..., p-1}.
    """

    rejected: frozenset
    method: str
    steps: list
    final_active: frozenset


@dataclass(frozen=True)
class FdrResult:
    """Benjamini-Hochberg decision: k_hat, threshold t_(k_hat), rejections"""

    k_hat: Count
    threshold: float
    rejected: frozenset


# =================
# Regularized means
# =================
@dataclass(frozen=True)
class SparsityModel:
    """Exactly sparse (ES), approximately sparse (AS) or l1-bounded (DM)

    ES uses `s` and `amplitude` (theta_j = amplitude / j^1.5 for j <= s). AS
    uses `A` and `a` (theta_j = A / j^a). DM uses the l1 budget `K`.
    """

    kind: Literal["ES", "AS", "DM"]
    s: Count = 8
    amplitude: float = 50.0
    A: float = 10.0
    a: float = 1.5
    K: float = 10.0

    def __post_init__(self):
        if self.kind == "ES" and self.s < 1:
            raise DomainError(f"ES model needs s >= 1, got {self.s=}")
        elif self.kind == "AS" and not (self.A > 0 and self.a > 0.5):
            raise DomainError(
                f"AS model needs A > 0 and a > 1/2, got {self.A=}, {self.a=}"
            )
        elif self.kind == "DM" and self.K <= 0:
            raise DomainError(f"DM model needs K > 0, got {self.K=}")
        elif self.kind not in ("ES", "AS", "DM"):
            raise DomainError(f"Unknown sparsity model {self.kind=}")


@dataclass(frozen=True)
class RegularizedEstimate:
    """Shrunk estimate, the lambda used and its support"""

    theta_tilde: Vector
    lambda_used: float
    support: frozenset


# ===
# RMD
# ===
@dataclass(frozen=True)
class RmdConfig:
    """Penalty level and outer-loop controls of nonlinear RMD"""

    lam: float
    max_outer_iterations: Count = 50
    tol: float = 1e-8

    def __post_init__(self):
        if self.lam < 0:
            raise DomainError(f"lambda must be nonnegative, got {self.lam=}")
        if self.tol <= 0:
            raise DomainError(f"tol must be positive, got {self.tol=}")


@dataclass(frozen=True)
class RmdResult:
    """RMD estimate

    `constraint_excess` is ||g_hat(theta_hat)||_inf - lambda on the exact
    moments; nonpositive up to 1e-8 whenever status is optimal.
    """

    theta_hat: Vector
    status: Literal["optimal", "infeasible", "max_iterations"]
    iterations: Count
    constraint_excess: float = np.nan


@dataclass(frozen=True)
class IdentifiabilityReport:
    l: Count
    s: Count
    sigma_min_l: float
    sigma_max_l: float
    mu_n: float
    lower_bound_l1: float
    lower_bound_l2: float
    L_n: float


# =====
# DRGMM
# =====
@dataclass(frozen=True)
class GmmPlugins:
    """Plug-in Jacobian (m x p) and score covariance (m x m)"""

    G_hat: Matrix
    Omega_hat: Matrix

    @property
    def m(self) -> Count:
        return self.G_hat.shape[0]

    @property
    def p(self) -> Count:
        return self.G_hat.shape[1]


@dataclass(frozen=True)
class GammaEstimate:
    """Row-wise LP estimate of the p x m moment selection matrix"""

    gamma_hat: Matrix
    penalties: Vector
    statuses: tuple


@dataclass(frozen=True)
class MuEstimate:
    """Row-wise LP estimate of the p x p inverse of gamma G"""

    mu_hat: Matrix
    penalties: Vector
    statuses: tuple


@dataclass(frozen=True)
class RemainderReport:
    r1: float
    r2: float
    r3: float


@dataclass(frozen=True)
class DrgmmResult:
    """Debiased estimate with its scores and variance

    `scores` has rows mu_hat gamma_hat g(X_i, theta_hat), so that
    theta_check = theta_hat - scores.mean(axis=0).
    """

    theta_hat: Vector
    theta_check: Vector
    scores: Matrix
    V_hat: Matrix
    gamma: GammaEstimate
    mu: MuEstimate
    rmd_status: str
    remainder: Optional[RemainderReport] = None

    @property
    def n(self) -> Count:
        return self.scores.shape[0]

    def standard_errors(self) -> Vector:
        return np.sqrt(np.diag(self.V_hat) / self.n)

    def to_mam_problem(self) -> MamProblem:
        return MamProblem(theta_hat=self.theta_check, influence=self.scores)


@dataclass(frozen=True)
class OrthogonalScoreStat:
    """sqrt(n) M_hat(alpha_0; theta_hat) and its plug-in variance"""

    xi: Matrix
    statistic: Vector
    V_M_hat: Matrix
    influence: Optional[Matrix] = None


# ========
# Datasets
# ========
@dataclass
class Dataset:
    """Simulated data with the truth recorded

    Only the fields relevant to `variant` are filled. `extras` holds oracle
    quantities (e.g. population G and Omega) keyed by name.
    """

    variant: str
    theta0: Vector
    problem: Optional[MamProblem] = None
    W: Optional[Matrix] = None
    Z: Optional[Matrix] = None
    y: Optional[Vector] = None
    D: Optional[Vector] = None
    Y: Optional[Matrix] = None
    treatment_prob: Optional[float] = None
    extras: dict = field(default_factory=dict)


# =================
# Table conversions
# =================
def band_to_df(band: SimultaneousBand) -> pd.DataFrame:
    """Columns j, theta_hat, lower, upper, radius"""
    return pd.DataFrame(
        {
            "j": np.arange(band.theta_hat.size),
            "theta_hat": band.theta_hat,
            "lower": band.lower,
            "upper": band.upper,
            "radius": band.radius,
        }
    )


def sup_draws_to_df(draws: SupDraws) -> pd.DataFrame:
    return pd.DataFrame({f"sup_{draws.scheme}": draws.values})


def decisions_to_df(
    t: TStats,
    bonferroni: FwerResult,
    holm: FwerResult,
    romano_wolf: FwerResult,
    bh: FdrResult,
) -> pd.DataFrame:
    """Columns j, t, rejected_bonf, rejected_holm, rejected_rw, rejected_bh"""
    idx = np.arange(t.values.size)
    return pd.DataFrame(
        {
            "j": idx,
            "t": t.values,
            "rejected_bonf": [j in bonferroni.rejected for j in idx],
            "rejected_holm": [j in holm.rejected for j in idx],
            "rejected_rw": [j in romano_wolf.rejected for j in idx],
            "rejected_bh": [j in bh.rejected for j in idx],
        }
    )


def drgmm_result_to_dict(result: DrgmmResult) -> dict:
    """JSON-ready summary: estimates, diag(V_hat), per-row penalties/status"""
    summary = {
        "theta_hat": result.theta_hat.tolist(),
        "theta_check": result.theta_check.tolist(),
        "V_hat_diag": np.diag(result.V_hat).tolist(),
        "rmd_status": result.rmd_status,
        "gamma_penalties": result.gamma.penalties.tolist(),
        "gamma_statuses": list(result.gamma.statuses),
        "mu_penalties": result.mu.penalties.tolist(),
        "mu_statuses": list(result.mu.statuses),
    }
    if result.remainder is not None:
        summary["remainder"] = {
            "r1": result.remainder.r1,
            "r2": result.remainder.r2,
            "r3": result.remainder.r3,
        }
    return summary
