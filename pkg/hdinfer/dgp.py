"""
Seeded data-generating processes for the Monte Carlo experiments

Streams: every generator draws its fixed design from Rng(seed).fork(0), the
replication-specific noise from Rng(seed).fork(1, replication) and random
parameters from Rng(seed).fork(2). The design is thus shared by all
replications of a seed.
"""
import logging
import math
from dataclasses import dataclass, fields
from typing import Literal, Optional

import numpy as np
from scipy import linalg, special

from hdinfer.annotations import Count, Seed, Vector
from hdinfer.datacl import Dataset, MamProblem, SparsityModel
from hdinfer.linalg_core import DimensionError, DomainError, Rng, as_vector
from hdinfer.regularized_means import generate_sparse_vector


# ======
# Logger
# ======
logger = logging.getLogger(__name__)


# =========
# Constants
# =========
_DESIGN_STREAM = 0
_NOISE_STREAM = 1
_PARAMETER_STREAM = 2
VARIANTS = (
    "figure1",
    "sparse_linear",
    "homoskedastic_iv",
    "logistic",
    "rct_outcomes",
    "means_model",
)


# =======
# Streams
# =======
def _streams(seed: Seed, replication: int) -> tuple:
    root = Rng(seed=seed)
    return (
        root.fork(_DESIGN_STREAM),
        root.fork(_NOISE_STREAM, replication),
        root.fork(_PARAMETER_STREAM),
    )


def _check_dims(**dims):
    for name, value in dims.items():
        if value < 1:
            raise DomainError(f"{name} must be >= 1, got {value}")


# ===========
# MAM designs
# ===========
def figure1_dgp(
    n: Count,
    p: Count,
    seed: Seed,
    replication: int = 0,
    n_signals: Count = 0,
    signal_strength: float = 0.0,
    dof: float = 4.0,
) -> Dataset:
    """Z_ij = W_ij eps_i with W_ij ~ U[0, 1] fixed and eps_i ~ t(dof)

    theta_hat = theta_0 + E_n[Z], influence = Z. theta_0 is 0 except on the
    first `n_signals` coordinates, set to signal_strength (V_jj / n)^(1/2)
    with V_jj = Var(t) E_n[W_ij^2] the variance under the fixed design.
    """
    _check_dims(n=n, p=p)
    if not (0 <= n_signals <= p):
        raise DomainError(f"Need 0 <= n_signals <= p, got {n_signals=}")
    if dof <= 2:
        raise DomainError(f"t noise needs dof > 2 for a variance, got {dof=}")
    design_rng, noise_rng, _ = _streams(seed, replication)
    W = design_rng.uniform(size=(n, p))
    eps = noise_rng.student_t(dof=dof, size=n)
    Z = W * eps[:, None]
    V_diag = dof / (dof - 2.0) * np.mean(W**2, axis=0)
    theta0 = np.zeros(p)
    theta0[:n_signals] = signal_strength * np.sqrt(V_diag[:n_signals] / n)
    return Dataset(
        variant="figure1",
        theta0=theta0,
        problem=MamProblem(theta_hat=theta0 + Z.mean(axis=0), influence=Z),
        W=W,
        extras={"V_diag": V_diag, "noise_variance": dof / (dof - 2.0)},
    )


def means_model_dgp(
    n: Count,
    p: Count,
    model: SparsityModel,
    sigma: float,
    seed: Seed,
    replication: int = 0,
) -> Dataset:
    """Ideal noise model: Z_ij ~ N(0, sigma^2), theta_hat = theta_0 + E_n[Z]"""
    _check_dims(n=n, p=p)
    _, noise_rng, param_rng = _streams(seed, replication)
    theta0 = generate_sparse_vector(model=model, p=p, rng=param_rng)
    Z = sigma * noise_rng.standard_normal(size=(n, p))
    return Dataset(
        variant="means_model",
        theta0=theta0,
        problem=MamProblem(theta_hat=theta0 + Z.mean(axis=0), influence=Z),
    )


def rct_outcomes_dgp(
    n: Count,
    p: Count,
    treatment_prob: float,
    effects: Vector,
    seed: Seed,
    replication: int = 0,
) -> Dataset:
    """Randomized trial with p outcomes and additive treatment effects

    D_i ~ Bernoulli(gamma), Y_ij = N(0, 1) + D_i effects_j,
    theta_hat_j = E_n[D Y_j / gamma - (1 - D) Y_j / (1 - gamma)], and
    Z_ij = (D_i Y_ij / gamma - m1_j) - ((1 - D_i) Y_ij / (1 - gamma) - m0_j)
    with m1, m0 the sample means of the treated and control groups.
    """
    _check_dims(n=n, p=p)
    if not (0.0 < treatment_prob < 1.0):
        raise DomainError(f"Need 0 < gamma < 1, got {treatment_prob=}")
    effects = as_vector(effects, name="effects")
    if effects.size != p:
        raise DimensionError(f"Expected {p} effects, got {effects.size=}")
    _, noise_rng, _ = _streams(seed, replication)
    D = noise_rng.bernoulli(prob=treatment_prob, size=n)
    Y = noise_rng.standard_normal(size=(n, p)) + D[:, None] * effects
    treated, control = D == 1.0, D == 0.0
    if not treated.any() or not control.any():
        raise DomainError("Both treatment groups need at least one unit")
    treated_part = D[:, None] * Y / treatment_prob
    control_part = (1.0 - D)[:, None] * Y / (1.0 - treatment_prob)
    influence = (treated_part - Y[treated].mean(axis=0)) - (
        control_part - Y[control].mean(axis=0)
    )
    return Dataset(
        variant="rct_outcomes",
        theta0=effects,
        problem=MamProblem(
            theta_hat=np.mean(treated_part - control_part, axis=0),
            influence=influence,
        ),
        D=D,
        Y=Y,
        treatment_prob=treatment_prob,
    )


# ==================
# Regression designs
# ==================
def sparse_linear_dgp(
    n: Count,
    p: Count,
    model: SparsityModel,
    sigma: float,
    seed: Seed,
    design: Literal["identity_cov", "toeplitz"] = "identity_cov",
    rho: float = 0.0,
    replication: int = 0,
) -> Dataset:
    """y = W theta_0 + sigma eps with Gaussian rows of W

    `design` "toeplitz" uses Cov(W_j, W_k) = rho^|j-k|. Unlike the MAM
    designs, W is redrawn in each replication.
    """
    _check_dims(n=n, p=p)
    _, noise_rng, param_rng = _streams(seed, replication)
    W = noise_rng.standard_normal(size=(n, p))
    if design == "toeplitz":
        if not (-1.0 < rho < 1.0):
            raise DomainError(f"Toeplitz design needs |rho| < 1, got {rho=}")
        cov = linalg.toeplitz(rho ** np.arange(p))
        W = W @ np.linalg.cholesky(cov).T
    elif design != "identity_cov":
        raise DomainError(f"Unknown {design=}")
    theta0 = generate_sparse_vector(model=model, p=p, rng=param_rng)
    y = W @ theta0 + sigma * noise_rng.standard_normal(size=n)
    return Dataset(variant="sparse_linear", theta0=theta0, W=W, Z=W, y=y)


def homoskedastic_iv_dgp(
    n: Count,
    p: Count,
    m: Count,
    s: Count,
    sigma: float,
    pi: float,
    seed: Seed,
    replication: int = 0,
    endogeneity: float = 0.5,
) -> Dataset:
    """Linear IV with homoskedastic errors

    Z ~ N(0, I_m); W = Z Pi + v with Pi[k, k] = pi for k < min(m, p) and 0
    elsewhere; eps = sigma (rho v_1 + (1 - rho^2)^1/2 u) is independent of Z
    but correlated with the first regressor; y = W theta_0 + eps with
    theta_0 = (1, ..., 1, 0, ..., 0) and s ones.

    `extras` holds the population G = -Pi, Omega = sigma^2 I and E[Z Z'] = I.
    """
    _check_dims(n=n, p=p, m=m, s=s)
    if s > p:
        raise DomainError(f"Need s <= p, got {s=}, {p=}")
    if not (-1.0 <= endogeneity <= 1.0):
        raise DomainError(f"Need |endogeneity| <= 1, got {endogeneity=}")
    if m < p:
        logger.warning(f"Under-identified IV design: {m=} < {p=}")
    _, noise_rng, _ = _streams(seed, replication)
    first_stage = np.zeros((m, p))
    matched = np.arange(min(m, p))
    first_stage[matched, matched] = pi
    Z = noise_rng.standard_normal(size=(n, m))
    v = noise_rng.standard_normal(size=(n, p))
    u = noise_rng.standard_normal(size=n)
    eps = sigma * (
        endogeneity * v[:, 0] + math.sqrt(1.0 - endogeneity**2) * u
    )
    W = Z @ first_stage + v
    theta0 = np.zeros(p)
    theta0[:s] = 1.0
    y = W @ theta0 + eps
    return Dataset(
        variant="homoskedastic_iv",
        theta0=theta0,
        W=W,
        Z=Z,
        y=y,
        extras={
            "G0": -first_stage,
            "Omega0": sigma**2 * np.eye(m),
            "EZZ0": np.eye(m),
        },
    )


def logistic_dgp(
    n: Count,
    p: Count,
    model: SparsityModel,
    seed: Seed,
    replication: int = 0,
    theta0: Optional[Vector] = None,
) -> Dataset:
    """Binary y with P(y = 1 | W) = Lambda(W' theta_0), W ~ N(0, I_p)

    theta_0 comes from `model` unless given explicitly.
    """
    _check_dims(n=n, p=p)
    _, noise_rng, param_rng = _streams(seed, replication)
    if theta0 is None:
        theta0 = generate_sparse_vector(model=model, p=p, rng=param_rng)
    theta0 = as_vector(theta0, name="theta0")
    if theta0.size != p:
        raise DimensionError(f"Expected {p} parameters, got {theta0.size=}")
    W = noise_rng.standard_normal(size=(n, p))
    prob = special.expit(W @ theta0)
    y = noise_rng.bernoulli(prob=prob, size=n)
    return Dataset(
        variant="logistic", theta0=theta0, W=W, Z=W, y=y, extras={"prob": prob}
    )


# ======
# Config
# ======
@dataclass(frozen=True)
class DgpSpec:
    """Variant and parameters of a data-generating process

    Only the parameters relevant to `variant` are read.
    """

    variant: str
    n: Count
    p: Count
    m: Count = 1
    s: Count = 1
    sigma: float = 1.0
    dof: float = 4.0
    pi: float = 1.0
    endogeneity: float = 0.5
    treatment_prob: float = 0.5
    effects: Optional[tuple] = None
    design: str = "identity_cov"
    rho: float = 0.0
    n_signals: Count = 0
    signal_strength: float = 0.0
    model: Optional[SparsityModel] = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise DomainError(f"Unknown DGP {self.variant=}")
        for name in ("n", "p", "m", "s"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int):
                raise DomainError(f"{name} must be an integer, got {value!r}")
            if value < 1:
                raise DomainError(f"{name} must be >= 1, got {value}")
        needs_model = ("sparse_linear", "logistic", "means_model")
        if self.variant in needs_model and self.model is None:
            raise DomainError(f"{self.variant=} needs a sparsity model")

    @classmethod
    def from_dict(cls, conf: dict) -> "DgpSpec":
        """Build from a config dict; `model` may itself be a dict"""
        known = {f.name for f in fields(cls)}
        unknown = set(conf) - known
        if unknown:
            raise DomainError(f"Unknown DGP parameters {sorted(unknown)}")
        kwargs = dict(conf)
        if isinstance(kwargs.get("model"), dict):
            kwargs["model"] = SparsityModel(**kwargs["model"])
        if kwargs.get("effects") is not None:
            kwargs["effects"] = tuple(kwargs["effects"])
        return cls(**kwargs)


def generate(spec: DgpSpec, seed: Seed, replication: int = 0) -> Dataset:
    """Dataset of one replication"""
    if spec.variant == "figure1":
        return figure1_dgp(
            n=spec.n,
            p=spec.p,
            seed=seed,
            replication=replication,
            n_signals=spec.n_signals,
            signal_strength=spec.signal_strength,
            dof=spec.dof,
        )
    if spec.variant == "means_model":
        return means_model_dgp(
            n=spec.n,
            p=spec.p,
            model=spec.model,
            sigma=spec.sigma,
            seed=seed,
            replication=replication,
        )
    if spec.variant == "rct_outcomes":
        effects = (
            np.zeros(spec.p) if spec.effects is None else spec.effects
        )
        return rct_outcomes_dgp(
            n=spec.n,
            p=spec.p,
            treatment_prob=spec.treatment_prob,
            effects=effects,
            seed=seed,
            replication=replication,
        )
    if spec.variant == "sparse_linear":
        return sparse_linear_dgp(
            n=spec.n,
            p=spec.p,
            model=spec.model,
            sigma=spec.sigma,
            seed=seed,
            design=spec.design,
            rho=spec.rho,
            replication=replication,
        )
    if spec.variant == "homoskedastic_iv":
        return homoskedastic_iv_dgp(
            n=spec.n,
            p=spec.p,
            m=spec.m,
            s=spec.s,
            sigma=spec.sigma,
            pi=spec.pi,
            seed=seed,
            replication=replication,
            endogeneity=spec.endogeneity,
        )
    return logistic_dgp(
        n=spec.n,
        p=spec.p,
        model=spec.model,
        seed=seed,
        replication=replication,
    )
