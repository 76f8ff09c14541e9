"""
FWER control (Bonferroni, Holm, Romano-Wolf stepdown) and FDR control
(Benjamini-Hochberg) over self-normalized t-statistics
"""
import logging
from typing import Callable, Optional

import numpy as np

from hdinfer.annotations import Alpha, Vector
from hdinfer.bootstrap import GAUSSIAN, bootstrap_draw_matrix, make_weights
from hdinfer.datacl import (
    BootstrapConfig,
    FdrResult,
    FwerResult,
    FwerStep,
    MamProblem,
    TStats,
)
from hdinfer.linalg_core import (
    DomainError,
    check_alpha,
    empirical_quantile,
    std_normal_quantile,
    std_normal_sf,
)
from hdinfer.mam import column_correlations, t_statistics


# ======
# Logger
# ======
logger = logging.getLogger(__name__)


# =========
# Constants
# =========
BONFERRONI = "bonferroni"
HOLM = "holm"
ROMANO_WOLF = "romano_wolf"
# Largest column correlation tolerated before BH logs a warning
DEFAULT_CORRELATION_BOUND = 0.5


# =======
# Helpers
# =======
def _test_values(t: TStats, two_sided: bool) -> Vector:
    return np.abs(t.values) if two_sided else np.asarray(t.values)


def _stepdown(
    values: Vector,
    critical_value: Callable[[tuple], float],
    method: str,
    max_steps: Optional[int] = None,
) -> FwerResult:
    """Shrink the active set until a pass rejects nothing

    Args:
        values (Vector): test statistics, large values reject
        critical_value (callable): active set -> critical value
        method (str): tag of the procedure
        max_steps (int): stop after that many passes (1 for single-step)
    """
    p = values.size
    active = tuple(range(p))
    steps = []
    while active:
        crit = critical_value(active)
        newly = tuple(j for j in active if values[j] > crit)
        steps.append(
            FwerStep(active=active, critical_value=crit, rejected=newly)
        )
        active = tuple(j for j in active if j not in set(newly))
        if not newly or (max_steps is not None and len(steps) >= max_steps):
            break
    final_active = frozenset(active)
    return FwerResult(
        rejected=frozenset(range(p)) - final_active,
        method=method,
        steps=steps,
        final_active=final_active,
    )


def _gaussian_critical(alpha: Alpha, n_hyp: int, two_sided: bool) -> float:
    level = alpha / (2.0 * n_hyp) if two_sided else alpha / n_hyp
    return std_normal_quantile(1.0 - level)


# ====
# FWER
# ====
def bonferroni(
    t: TStats, alpha: Alpha, two_sided: bool = False
) -> FwerResult:
    """Reject t_j > Phi^-1(1 - alpha/p) (alpha/(2p) when two-sided)"""
    check_alpha(alpha)
    values = _test_values(t=t, two_sided=two_sided)
    crit = _gaussian_critical(alpha, values.size, two_sided)
    return _stepdown(
        values=values,
        critical_value=lambda active: crit,
        method=BONFERRONI,
        max_steps=1,
    )


def holm_stepdown(
    t: TStats, alpha: Alpha, two_sided: bool = False
) -> FwerResult:
    """Stepdown with c_w = Phi^-1(1 - alpha/|w|)"""
    check_alpha(alpha)
    values = _test_values(t=t, two_sided=two_sided)
    return _stepdown(
        values=values,
        critical_value=lambda active: _gaussian_critical(
            alpha, len(active), two_sided
        ),
        method=HOLM,
    )


def romano_wolf_stepdown(
    prob: MamProblem,
    null_values: Vector,
    alpha: Alpha,
    cfg: BootstrapConfig,
    two_sided: bool = False,
    n_jobs: int = 1,
) -> FwerResult:
    """Stepdown with bootstrap critical values

    A single B x p matrix of self-normalized Gaussian-bootstrap coordinates
    is drawn; c_w is the (1 - alpha) quantile of the per-draw max over w, so
    c_w is monotone in w for the same draws.
    """
    check_alpha(alpha)
    if cfg.scheme != GAUSSIAN:
        raise DomainError(
            "Romano-Wolf critical values use the gaussian scheme,"
            f" {cfg.scheme=}"
        )
    t = t_statistics(prob=prob, null_values=null_values)
    values = _test_values(t=t, two_sided=two_sided)
    draws = bootstrap_draw_matrix(
        prob=prob,
        weights=make_weights(prob=prob, weight_mode="inv_sd"),
        cfg=cfg,
        n_jobs=n_jobs,
    )
    if two_sided:
        draws = np.abs(draws)

    def critical_value(active: tuple) -> float:
        maxima = np.max(draws[:, list(active)], axis=1)
        return empirical_quantile(samples=maxima, level=1.0 - alpha)

    return _stepdown(
        values=values, critical_value=critical_value, method=ROMANO_WOLF
    )


# ===
# FDR
# ===
def benjamini_hochberg(
    t: TStats, alpha: Alpha, two_sided: bool = False
) -> FdrResult:
    """Benjamini-Hochberg on Gaussian tail probabilities

    k_hat = max{j : 1 - Phi(t_(j)) <= alpha j / p}, t_(0) = +inf; rejects
    every t_j >= t_(k_hat). Two-sided uses |t| and alpha / 2.
    """
    check_alpha(alpha)
    values = _test_values(t=t, two_sided=two_sided)
    level = alpha / 2.0 if two_sided else alpha
    p = values.size
    order = np.argsort(-values, kind="stable")
    tails = std_normal_sf(values[order])
    passing = np.flatnonzero(tails <= level * np.arange(1, p + 1) / p)
    k_hat = int(passing[-1]) + 1 if passing.size > 0 else 0
    if k_hat == 0:
        return FdrResult(k_hat=0, threshold=np.inf, rejected=frozenset())
    threshold = float(values[order[k_hat - 1]])
    rejected = frozenset(int(j) for j in np.flatnonzero(values >= threshold))
    return FdrResult(k_hat=k_hat, threshold=threshold, rejected=rejected)


def dependence_diagnostic(
    prob: MamProblem, bound: float = DEFAULT_CORRELATION_BOUND
) -> float:
    """Largest absolute off-diagonal correlation among influence columns

    Reported next to BH decisions; only logs a warning above `bound`.
    """
    corr = column_correlations(prob=prob)
    np.fill_diagonal(corr, 0.0)
    largest = float(np.max(np.abs(corr)))
    if largest > bound:
        logger.warning(
            f"Influence columns correlate up to {largest:.3f} > {bound}; FDR"
            " guarantees of BH assume weak dependence"
        )
    return largest
