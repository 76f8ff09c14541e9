"""
Test level: unit
"""
import logging

import numpy as np
import pytest

from hdinfer.bootstrap import lambda_hat, make_weights, sup_draws
from hdinfer.datacl import BootstrapConfig, MamProblem, TStats
from hdinfer.linalg_core import DomainError
from hdinfer.multiple_testing import (
    benjamini_hochberg,
    bonferroni,
    dependence_diagnostic,
    holm_stepdown,
    romano_wolf_stepdown,
)


def _t(values):
    values = np.asarray(values, dtype=float)
    return TStats(values=values, scale=np.ones(values.size))


def _problem(n=100, p=6, seed=0, shift=None):
    influence = np.random.default_rng(seed).normal(size=(n, p))
    theta_hat = influence.mean(axis=0)
    if shift is not None:
        theta_hat = theta_hat + shift
    return MamProblem(theta_hat=theta_hat, influence=influence)


def test_bonferroni_examples():
    assert bonferroni(t=_t(np.zeros(5)), alpha=0.05).rejected == frozenset()
    result = bonferroni(t=_t([1.7]), alpha=0.05)
    assert result.steps[0].critical_value == pytest.approx(1.64485, abs=1e-5)
    assert result.rejected == {0}
    result = bonferroni(t=_t([4.0, 0.0]), alpha=0.05)
    assert result.steps[0].critical_value == pytest.approx(2.24140, abs=1e-5)
    assert result.rejected == {0}


def test_holm_example():
    result = holm_stepdown(t=_t([4.0, 2.0, 0.0]), alpha=0.05)
    assert result.rejected == {0}
    assert [step.critical_value for step in result.steps] == pytest.approx(
        [2.12805, 1.95996], abs=1e-5
    )
    assert result.final_active == {1, 2}


def test_holm_single_hypothesis_is_z_test():
    assert holm_stepdown(t=_t([1.7]), alpha=0.05).rejected == {0}
    assert holm_stepdown(t=_t([1.6]), alpha=0.05).rejected == frozenset()


def test_bonferroni_within_holm():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        t = _t(rng.normal(loc=1.5, scale=1.5, size=8))
        assert (
            bonferroni(t=t, alpha=0.1).rejected
            <= holm_stepdown(t=t, alpha=0.1).rejected
        )


def test_two_sided_thresholds():
    t = _t([-2.3, 0.0])
    # Phi^-1(1 - 0.05 / 4) = 2.24140
    assert bonferroni(t=t, alpha=0.05, two_sided=True).rejected == {0}
    assert bonferroni(t=t, alpha=0.05).rejected == frozenset()
    assert holm_stepdown(t=t, alpha=0.05, two_sided=True).rejected == {0}


def test_romano_wolf_critical_values_decrease():
    prob = _problem(shift=np.array([1.0, 0.5, 0.3, 0.0, 0.0, 0.0]))
    result = romano_wolf_stepdown(
        prob=prob,
        null_values=np.zeros(6),
        alpha=0.05,
        cfg=BootstrapConfig(B=500, seed=1),
    )
    crits = [step.critical_value for step in result.steps]
    assert all(a >= b for a, b in zip(crits, crits[1:]))
    assert 0 in result.rejected


def test_romano_wolf_single_coordinate_matches_lambda_hat():
    prob = _problem(p=1)
    cfg = BootstrapConfig(B=400, seed=8)
    result = romano_wolf_stepdown(
        prob=prob, null_values=np.zeros(1), alpha=0.1, cfg=cfg
    )
    draws = sup_draws(
        prob=prob,
        weights=make_weights(prob=prob, weight_mode="inv_sd"),
        cfg=cfg,
    )
    # Two-sided draws are |.|, the one-sided quantile uses signed draws
    two_sided = romano_wolf_stepdown(
        prob=prob,
        null_values=np.zeros(1),
        alpha=0.1,
        cfg=cfg,
        two_sided=True,
    )
    assert two_sided.steps[0].critical_value == pytest.approx(
        lambda_hat(draws=draws, alpha=0.1)
    )
    assert result.steps[0].critical_value <= two_sided.steps[0].critical_value


def test_romano_wolf_needs_gaussian_scheme():
    with pytest.raises(DomainError):
        romano_wolf_stepdown(
            prob=_problem(),
            null_values=np.zeros(6),
            alpha=0.05,
            cfg=BootstrapConfig(scheme="empirical", B=10),
        )


def test_benjamini_hochberg_example():
    result = benjamini_hochberg(t=_t([3.0, 2.0, 1.0, 0.0]), alpha=0.05)
    assert result.k_hat == 2
    assert result.threshold == 2.0
    assert result.rejected == {0, 1}


def test_benjamini_hochberg_edge_cases():
    result = benjamini_hochberg(t=_t(np.full(4, -10.0)), alpha=0.05)
    assert (result.k_hat, result.rejected) == (0, frozenset())
    assert result.threshold == np.inf
    # 1 - Phi(1.7) = 0.0446
    assert benjamini_hochberg(t=_t([1.7]), alpha=0.05).rejected == {0}
    assert benjamini_hochberg(t=_t([1.6]), alpha=0.05).rejected == frozenset()


def test_benjamini_hochberg_ties_are_rejected_together():
    result = benjamini_hochberg(t=_t([0.0, 3.0, 3.0, 1.0]), alpha=0.05)
    assert result.rejected == {1, 2}


def test_benjamini_hochberg_rejects_top_order_statistics():
    rng = np.random.default_rng(5)
    for _ in range(200):
        values = rng.normal(loc=1.0, scale=2.0, size=10)
        small = benjamini_hochberg(t=_t(values), alpha=0.05)
        large = benjamini_hochberg(t=_t(values), alpha=0.2)
        # Check the rejected set is the top k_hat indices
        top = set(np.argsort(-values, kind="stable")[: small.k_hat].tolist())
        assert small.rejected == top
        # Check monotonicity in alpha
        assert small.rejected <= large.rejected


def test_dependence_diagnostic(caplog):
    z = np.random.default_rng(6).normal(size=(80, 1))
    prob = MamProblem(theta_hat=np.zeros(2), influence=np.hstack([z, z]))
    with caplog.at_level(logging.WARNING):
        largest = dependence_diagnostic(prob=prob)
    assert largest == pytest.approx(1.0)
    assert "correlate" in caplog.text
