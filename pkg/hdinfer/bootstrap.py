"""
Gaussian-multiplier and empirical bootstrap of the weighted sup statistic
||sqrt(n) W (theta* - theta_hat)||_inf
"""
import logging
import math
from typing import Literal

import joblib
import numpy as np
from tqdm import tqdm

from hdinfer.annotations import Alpha, Count, Vector
from hdinfer.datacl import BootstrapConfig, MamProblem, SupDraws
from hdinfer.linalg_core import (
    DimensionError,
    DomainError,
    Rng,
    check_alpha,
    empirical_quantile,
    std_normal_quantile,
)
from hdinfer.mam import influence_scales


# ======
# Logger
# ======
logger = logging.getLogger(__name__)


# =========
# Constants
# =========
_CHUNK_SIZE = 256
_PROGRESS_MIN_DRAWS = 20_000
GAUSSIAN = "gaussian"
EMPIRICAL = "empirical"


# =======
# Weights
# =======
def make_weights(
    prob: MamProblem, weight_mode: Literal["unit", "inv_sd"]
) -> Vector:
    """Unit weights, or (E_n[Z_ij^2])^(-1/2)"""
    if weight_mode == "unit":
        return np.ones(prob.p)
    if weight_mode == "inv_sd":
        return 1.0 / influence_scales(prob)
    raise DomainError(f"Unknown {weight_mode=}")


def _check_weights(prob: MamProblem, weights: Vector) -> Vector:
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (prob.p,):
        raise DimensionError(
            f"Expected {prob.p} weights, got {weights.shape=}"
        )
    if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
        raise DomainError("Bootstrap weights must be finite and positive")
    return weights


# =====
# Draws
# =====
def _multipliers(n: Count, draw: int, cfg: BootstrapConfig) -> Vector:
    """Multipliers of one draw, centered so that the draw is sum_i e_i Z_i"""
    rng = Rng(seed=cfg.seed).fork(draw)
    if cfg.scheme == GAUSSIAN:
        return rng.standard_normal(size=n)
    return rng.multinomial_counts(n=n) - 1.0


def _draw_chunk(
    influence: np.ndarray,
    scaling: Vector,
    draws: range,
    cfg: BootstrapConfig,
) -> np.ndarray:
    n = influence.shape[0]
    multipliers = np.vstack(
        [_multipliers(n=n, draw=b, cfg=cfg) for b in draws]
    )
    return (multipliers @ influence) * scaling


def bootstrap_draw_matrix(
    prob: MamProblem,
    weights: Vector,
    cfg: BootstrapConfig,
    n_jobs: int = 1,
    progress: bool = False,
) -> np.ndarray:
    """B x p matrix of signed draws w_j n^(-1/2) sum_i e_i Z_ij

    Draw b only depends on (cfg.seed, b), so the output does not depend on
    `n_jobs` nor on the chunking.

    Args:
        prob (MamProblem): estimate and influence matrix
        weights (Vector): p positive weights
        cfg (BootstrapConfig): scheme, number of draws and seed
        n_jobs (int): joblib workers over chunks of draws
        progress (bool): show a progress bar over chunks

    Returns:
        np.ndarray: draws in rows
    """
    weights = _check_weights(prob=prob, weights=weights)
    scaling = weights / math.sqrt(prob.n)
    chunks = [
        range(start, min(start + _CHUNK_SIZE, cfg.B))
        for start in range(0, cfg.B, _CHUNK_SIZE)
    ]
    show_bar = progress and cfg.B >= _PROGRESS_MIN_DRAWS
    if n_jobs == 1:
        blocks = [
            _draw_chunk(prob.influence, scaling, draws, cfg)
            for draws in tqdm(chunks, disable=not show_bar)
        ]
    else:
        blocks = joblib.Parallel(n_jobs=n_jobs)(
            joblib.delayed(_draw_chunk)(prob.influence, scaling, draws, cfg)
            for draws in chunks
        )
    return np.vstack(blocks)


def _sup_draws(
    prob: MamProblem,
    weights: Vector,
    cfg: BootstrapConfig,
    scheme: str,
    n_jobs: int,
) -> SupDraws:
    if cfg.scheme != scheme:
        raise DomainError(f"Expected a {scheme} config, got {cfg.scheme=}")
    matrix = bootstrap_draw_matrix(
        prob=prob, weights=weights, cfg=cfg, n_jobs=n_jobs
    )
    return SupDraws(values=np.max(np.abs(matrix), axis=1), scheme=scheme)


def gaussian_bootstrap_sup(
    prob: MamProblem, weights: Vector, cfg: BootstrapConfig, n_jobs: int = 1
) -> SupDraws:
    """Multiplier bootstrap with i.i.d. N(0, 1) multipliers"""
    return _sup_draws(prob, weights, cfg, scheme=GAUSSIAN, n_jobs=n_jobs)


def empirical_bootstrap_sup(
    prob: MamProblem, weights: Vector, cfg: BootstrapConfig, n_jobs: int = 1
) -> SupDraws:
    """Empirical bootstrap through multinomial(n, 1/n) counts e, using e - 1"""
    return _sup_draws(prob, weights, cfg, scheme=EMPIRICAL, n_jobs=n_jobs)


def sup_draws(
    prob: MamProblem, weights: Vector, cfg: BootstrapConfig, n_jobs: int = 1
) -> SupDraws:
    """Dispatch on cfg.scheme"""
    return _sup_draws(prob, weights, cfg, scheme=cfg.scheme, n_jobs=n_jobs)


# =========
# Quantiles
# =========
def lambda_hat(draws: SupDraws, alpha: Alpha) -> float:
    """(1 - alpha) empirical quantile of the sup draws"""
    check_alpha(alpha)
    return empirical_quantile(samples=draws.values, level=1.0 - alpha)


def gaussian_quantile_bound(sigma_bar: float, p: Count, a: Alpha) -> float:
    """min(sigma_bar Phi^-1(1 - a/(2p)), sigma_bar sqrt(2 log(2p/a)))

    Upper bound on the (1 - a) quantile of the sup of p centered Gaussians
    with standard deviations at most sigma_bar.
    """
    if sigma_bar <= 0:
        raise DomainError(f"sigma_bar must be positive, got {sigma_bar=}")
    check_alpha(a, name="a")
    if p < 1:
        raise DomainError(f"Need p >= 1, got {p=}")
    quantile_term = sigma_bar * std_normal_quantile(1.0 - a / (2.0 * p))
    union_term = sigma_bar * math.sqrt(2.0 * math.log(2.0 * p / a))
    return min(quantile_term, union_term)
