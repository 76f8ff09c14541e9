"""
l1-regularized estimation of many means: thresholding estimators, choice of
lambda, error bounds and sparse parameter generators
"""
import logging
import math
from typing import Literal, Optional

import numpy as np

from hdinfer.annotations import Alpha, Count, Lambda, Vector
from hdinfer.bootstrap import gaussian_bootstrap_sup, lambda_hat
from hdinfer.datacl import (
    BootstrapConfig,
    MamProblem,
    RegularizedEstimate,
    SparsityModel,
)
from hdinfer.linalg_core import (
    DomainError,
    Rng,
    as_vector,
    check_alpha,
    std_normal_quantile,
)


# ======
# Logger
# ======
logger = logging.getLogger(__name__)


# ==========
# Estimators
# ==========
def _support(theta: Vector) -> frozenset:
    return frozenset(int(j) for j in np.flatnonzero(theta))


def soft_threshold(theta_hat: Vector, lam: Lambda) -> RegularizedEstimate:
    """theta_j = sign(theta_hat_j) (|theta_hat_j| - lam)_+

    Closed form of min ||theta||_1 s.t. ||theta_hat - theta||_inf <= lam.
    """
    if lam < 0:
        raise DomainError(f"lambda must be nonnegative, got {lam=}")
    theta_hat = as_vector(theta_hat, name="theta_hat")
    theta_tilde = np.sign(theta_hat) * np.maximum(np.abs(theta_hat) - lam, 0)
    return RegularizedEstimate(
        theta_tilde=theta_tilde,
        lambda_used=float(lam),
        support=_support(theta_tilde),
    )


def selection_threshold(theta_hat: Vector, rho: float) -> RegularizedEstimate:
    """theta_j = theta_hat_j 1(|theta_hat_j| > rho), kept unshrunk"""
    if rho < 0:
        raise DomainError(f"rho must be nonnegative, got {rho=}")
    theta_hat = as_vector(theta_hat, name="theta_hat")
    theta_tilde = np.where(np.abs(theta_hat) > rho, theta_hat, 0.0)
    return RegularizedEstimate(
        theta_tilde=theta_tilde,
        lambda_used=float(rho),
        support=_support(theta_tilde),
    )


# ================
# Choice of lambda
# ================
def select_lambda(
    mode: Literal["self_normalized", "ideal_noise", "bootstrap"],
    alpha: Alpha,
    prob: Optional[MamProblem] = None,
    n: Optional[Count] = None,
    p: Optional[Count] = None,
    sigma: float = 1.0,
    cfg: Optional[BootstrapConfig] = None,
) -> float:
    """Lambda with ||theta_hat - theta_0||_inf <= lambda w.p. about 1 - alpha

    Modes:
        self_normalized: n^-1/2 Phi^-1(1 - alpha/(2p)) max_j (E_n Z_ij^2)^1/2,
            needs `prob`
        ideal_noise: sigma n^-1/2 Phi^-1(1 - alpha/(2p)), needs `n` and `p`
        bootstrap: lambda_hat(1 - alpha) of the unit-weight Gaussian bootstrap
            divided by sqrt(n), needs `prob` (and optionally `cfg`)
    """
    check_alpha(alpha)
    if mode == "ideal_noise":
        if n is None or p is None:
            raise DomainError("ideal_noise needs n and p")
        return sigma * std_normal_quantile(1 - alpha / (2 * p)) / math.sqrt(n)
    if prob is None:
        raise DomainError(f"{mode=} needs a MamProblem")
    if mode == "self_normalized":
        largest_scale = math.sqrt(float(np.max(prob.second_moments())))
        critical = std_normal_quantile(1 - alpha / (2 * prob.p))
        return critical * largest_scale / math.sqrt(prob.n)
    if mode == "bootstrap":
        draws = gaussian_bootstrap_sup(
            prob=prob,
            weights=np.ones(prob.p),
            cfg=cfg if cfg is not None else BootstrapConfig(),
        )
        return lambda_hat(draws=draws, alpha=alpha) / math.sqrt(prob.n)
    raise DomainError(f"Unknown {mode=}")


# ============
# Error bounds
# ============
def effective_sparsity(model: SparsityModel, lam: Lambda) -> int:
    """ceil((A / lam)^(1/a)) for approximately sparse models"""
    return math.ceil((model.A / lam) ** (1.0 / model.a))


def theoretical_error_bound(
    model: SparsityModel, lam: Lambda, q: float
) -> float:
    """Bound on ||theta_tilde - theta_0||_q when the sup error is below lam

    Holds on the event ||theta_hat - theta_0||_inf <= lam.

    ES: 2 s^(1/q) lam
    DM: 2 K^(1/q) lam^(1 - 1/q)
    AS: 2 s^(1/q) lam + 2 (2^(aq) s lam^q / (aq - 1))^(1/q),
        with s = ceil((A/lam)^(1/a)); needs q > 1/a and lam < A
    """
    if q < 1:
        raise DomainError(f"Need q >= 1, got {q=}")
    if lam < 0:
        raise DomainError(f"lambda must be nonnegative, got {lam=}")
    if model.kind == "ES":
        return 2.0 * model.s ** (1.0 / q) * lam
    if model.kind == "DM":
        return 2.0 * model.K ** (1.0 / q) * lam ** (1.0 - 1.0 / q)
    aq = model.a * q
    if aq <= 1 or not (0 < lam < model.A):
        raise DomainError(
            f"AS bound needs q > 1/a and 0 < lambda < A, got {q=}, {lam=}"
        )
    s = effective_sparsity(model=model, lam=lam)
    head = 2.0 * s ** (1.0 / q) * lam
    tail = 2.0 * (2.0**aq * s * lam**q / (aq - 1.0)) ** (1.0 / q)
    return head + tail


# ==========
# Generators
# ==========
def generate_sparse_vector(
    model: SparsityModel, p: Count, rng: Optional[Rng] = None
) -> Vector:
    """Parameter vector of length p under an ES, AS or DM model

    ES: amplitude / j^1.5 for j <= s, else 0
    AS: A / j^a
    DM: K/(2p) + K/(2p) v_j with v the sorted (nondecreasing) i.i.d.
        standard exponentials, rescaled when ||theta||_1 exceeds K. Only this
        model consumes `rng`.
    """
    if p < 1:
        raise DomainError(f"Need p >= 1, got {p=}")
    j = np.arange(1, p + 1, dtype=float)
    if model.kind == "ES":
        return np.where(j <= model.s, model.amplitude / j**1.5, 0.0)
    if model.kind == "AS":
        return model.A / j**model.a
    if rng is None:
        raise DomainError("DM model needs an Rng")
    base = model.K / (2.0 * p)
    theta = base + base * np.sort(rng.exponential(size=p))
    l1 = float(np.sum(np.abs(theta)))
    if l1 > model.K:
        theta *= model.K / l1
    return theta
