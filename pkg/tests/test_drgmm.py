"""
Test level: unit
"""
import math

import numpy as np
import pytest

from hdinfer.datacl import GammaEstimate, GmmPlugins, MuEstimate, RmdConfig
from hdinfer.drgmm import (
    AdaptivePenalty,
    DrgmmStageError,
    RemainderOracle,
    asymptotic_variance,
    debias,
    default_penalties,
    drgmm_pipeline,
    estimate_gamma,
    estimate_mu,
    orthogonal_score,
    plugin_G_Omega,
    remainder_bounds,
)
from hdinfer.linalg_core import DomainError, std_normal_quantile
from hdinfer.rmd import LinearIVScore, LinearScore


def _plugins(G, Omega):
    return GmmPlugins(
        G_hat=np.asarray(G, dtype=float), Omega_hat=np.asarray(Omega, float)
    )


def _gamma(matrix):
    p = matrix.shape[0]
    return GammaEstimate(
        gamma_hat=matrix, penalties=np.zeros(p), statuses=("optimal",) * p
    )


def _mu(matrix):
    p = matrix.shape[0]
    return MuEstimate(
        mu_hat=matrix, penalties=np.zeros(p), statuses=("optimal",) * p
    )


def _regression(n=200, p=3, seed=0):
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(n, p))
    y = W @ np.arange(1.0, p + 1) + rng.normal(size=n)
    return y, W


def test_plugin_omega_examples():
    # Scores are the rows of Z when y = 1 and theta_hat = 0
    score = LinearIVScore(
        y=np.ones(5), W=np.zeros((5, 1)), Z=np.tile([1.0, 0.0], (5, 1))
    )
    plugins = plugin_G_Omega(score=score, theta_hat=np.zeros(1))
    np.testing.assert_array_equal(plugins.Omega_hat, [[1, 0], [0, 0]])
    score = LinearIVScore(y=np.ones(2), W=np.zeros((2, 1)), Z=np.eye(2))
    plugins = plugin_G_Omega(score=score, theta_hat=np.zeros(1))
    np.testing.assert_allclose(plugins.Omega_hat, np.eye(2) / 2)


def test_plugin_jacobian_of_linear_score_is_constant():
    y, W = _regression()
    score = LinearIVScore(y=y, W=W, Z=W)
    a = plugin_G_Omega(score=score, theta_hat=np.zeros(3))
    b = plugin_G_Omega(score=score, theta_hat=np.ones(3))
    np.testing.assert_array_equal(a.G_hat, b.G_hat)


def test_estimate_gamma_examples():
    for omega, expected in (
        (np.eye(2), np.eye(2)),
        (2 * np.eye(2), np.eye(2) / 2),
        (
            np.array([[1.0, 0.5], [0.5, 1.0]]),
            np.array([[4.0, -2.0], [-2.0, 4.0]]) / 3,
        ),
    ):
        gamma = estimate_gamma(
            plugins=_plugins(np.eye(2), omega), penalties=0.0
        )
        np.testing.assert_allclose(gamma.gamma_hat, expected, atol=1e-9)
        assert gamma.statuses == ("optimal", "optimal")


def test_estimate_gamma_needs_penalties():
    plugins = _plugins(np.eye(2), np.eye(2))
    with pytest.raises(DomainError):
        estimate_gamma(plugins=plugins)
    with pytest.raises(DomainError):
        estimate_gamma(plugins=plugins, mode="adaptive")
    with pytest.raises(DomainError):
        estimate_gamma(plugins=plugins, penalties=-1.0)


def test_estimate_mu_examples():
    plugins = _plugins(np.eye(2), np.eye(2))
    mu = estimate_mu(gamma=_gamma(np.eye(2)), plugins=plugins, penalties=0.0)
    np.testing.assert_allclose(mu.mu_hat, np.eye(2), atol=1e-9)
    mu = estimate_mu(
        gamma=_gamma(2 * np.eye(2)), plugins=plugins, penalties=0.0
    )
    np.testing.assert_allclose(mu.mu_hat, np.eye(2) / 2, atol=1e-9)
    mu = estimate_mu(gamma=_gamma(np.eye(2)), plugins=plugins, penalties=1.0)
    np.testing.assert_allclose(mu.mu_hat, np.zeros((2, 2)), atol=1e-12)


def test_l1_dominance_with_a_feasible_oracle_row():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(6, 6))
    omega = A @ A.T / 6 + np.eye(6)
    G = rng.normal(size=(6, 3))
    plugins = _plugins(G, omega)
    gamma0 = rng.normal(size=(3, 6))
    # gamma0 rows are feasible at these penalties
    penalties = np.max(np.abs(gamma0 @ omega - G.T), axis=1)
    gamma = estimate_gamma(plugins=plugins, penalties=penalties)
    assert np.all(
        np.sum(np.abs(gamma.gamma_hat), axis=1)
        <= np.sum(np.abs(gamma0), axis=1) + 1e-8
    )
    # Check the row constraints
    excess = np.abs(gamma.gamma_hat @ omega - G.T).max(axis=1) - penalties
    assert np.all(excess <= 1e-8)


def test_adaptive_mode_with_zero_scales_is_exact():
    omega = np.array([[1.0, 0.5], [0.5, 1.0]])
    plugins = _plugins(np.eye(2), omega)
    adaptive = AdaptivePenalty(n=100, ell_omega=0.0, ell_g=0.0)
    gamma = estimate_gamma(plugins=plugins, mode="adaptive", adaptive=adaptive)
    np.testing.assert_allclose(gamma.gamma_hat, np.linalg.inv(omega))
    mu = estimate_mu(
        gamma=gamma, plugins=plugins, mode="adaptive", adaptive=adaptive
    )
    np.testing.assert_allclose(mu.mu_hat, omega, atol=1e-9)
    with pytest.raises(DomainError):
        AdaptivePenalty(n=0, ell_omega=1.0, ell_g=1.0)


def test_debias_identities():
    theta_hat = np.array([1.0, -2.0])
    gamma, mu = _gamma(np.eye(2)), _mu(np.eye(2))
    np.testing.assert_array_equal(
        debias(theta_hat, mu, gamma, np.zeros(2)), theta_hat
    )
    np.testing.assert_array_equal(
        debias(theta_hat, _mu(np.zeros((2, 2))), gamma, np.ones(2)),
        theta_hat,
    )
    # Linear score with mu gamma = G^-1 gives the exact GMM solution
    G = np.array([[2.0, 1.0], [0.0, 1.0]])
    g0 = np.array([1.0, -1.0])
    moments = G @ theta_hat + g0
    theta_check = debias(theta_hat, _mu(np.linalg.inv(G)), gamma, moments)
    np.testing.assert_allclose(theta_check, -np.linalg.solve(G, g0))


def test_asymptotic_variance_examples():
    np.testing.assert_allclose(
        asymptotic_variance(G=np.eye(2), Omega=np.eye(2)), np.eye(2)
    )
    np.testing.assert_allclose(
        asymptotic_variance(G=np.eye(2), Omega=4 * np.eye(2)),
        4 * np.eye(2),
        rtol=1e-8,
    )
    np.testing.assert_allclose(
        asymptotic_variance(G=np.ones((2, 1)), Omega=np.eye(2)), [[0.5]]
    )


def test_remainder_bounds_vanish():
    eye = np.eye(2)
    report = remainder_bounds(
        mu=_mu(eye),
        gamma=_gamma(eye),
        G_hat=eye,
        G_tilde=eye,
        theta_hat=np.ones(2),
        theta0=np.zeros(2),
        g_hat_at_theta0=np.array([0.3, -0.1]),
        gamma0=eye,
        mu0=eye,
        n=100,
    )
    assert (report.r1, report.r2, report.r3) == (0.0, 0.0, 0.0)


def test_orthogonal_score_examples():
    plugins = _plugins(np.eye(2), np.array([[2.0, 0.3], [0.3, 1.0]]))
    xi = np.array([[1.0, 0.0]])
    stat = orthogonal_score(
        xi=xi,
        plugins=plugins,
        mu=_mu(np.zeros((2, 2))),
        gamma=_gamma(np.eye(2)),
        g_hat_alpha_theta=np.array([0.5, 1.0]),
        n=16,
    )
    assert stat.statistic[0] == pytest.approx(2.0)
    assert stat.V_M_hat[0, 0] == pytest.approx(2.0)
    # xi G mu gamma = xi annihilates any score
    stat = orthogonal_score(
        xi=xi,
        plugins=plugins,
        mu=_mu(np.eye(2)),
        gamma=_gamma(np.eye(2)),
        g_hat_alpha_theta=np.array([0.5, 1.0]),
        n=16,
    )
    np.testing.assert_allclose(stat.statistic, 0.0)


def test_default_penalties():
    gamma_pen, mu_pen = default_penalties(n=500, p=10, m=20)
    lbar = 0.5 * std_normal_quantile(1 - 1e-5) / math.sqrt(500)
    np.testing.assert_allclose(gamma_pen, np.full(10, lbar))
    np.testing.assert_allclose(mu_pen, 2 * gamma_pen)


def test_exact_identification_reproduces_gmm():
    y, W = _regression()
    score = LinearIVScore(y=y, W=W, Z=W)
    result = drgmm_pipeline(
        score=score,
        rmd_cfg=RmdConfig(lam=0.2),
        gamma_penalties=0.0,
        mu_penalties=0.0,
    )
    ols = np.linalg.solve(W.T @ W, W.T @ y)
    np.testing.assert_allclose(result.theta_check, ols, atol=1e-8)
    # Check theta_check - theta_hat = -mean(scores)
    np.testing.assert_allclose(
        result.theta_check - result.theta_hat,
        -result.scores.mean(axis=0),
        atol=1e-12,
    )
    prob = result.to_mam_problem()
    assert (prob.n, prob.p) == (200, 3)


def test_pipeline_remainder_with_oracle():
    y, W = _regression(seed=3)
    score = LinearIVScore(y=y, W=W, Z=W)
    result = drgmm_pipeline(
        score=score,
        rmd_cfg=RmdConfig(lam=0.1),
        oracle=RemainderOracle(
            theta0=np.arange(1.0, 4.0), gamma0=np.eye(3), mu0=np.eye(3)
        ),
    )
    assert result.remainder.r2 == 0.0
    assert result.remainder.r1 >= 0.0 and result.remainder.r3 >= 0.0


def test_stage_errors_are_labelled():
    score = LinearScore(G_hat=np.eye(2), g0_hat=np.ones(2))
    with pytest.raises(DrgmmStageError) as excinfo:
        drgmm_pipeline(score=score, rmd_cfg=RmdConfig(lam=0.1))
    assert "step 2" in str(excinfo.value)
