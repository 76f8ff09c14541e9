"""
Test level: unit
"""
import math

import numpy as np
import pytest

from hdinfer.datacl import MamProblem, SparsityModel
from hdinfer.linalg_core import DomainError, Rng
from hdinfer.lp_solver import solve_l1_box
from hdinfer.regularized_means import (
    effective_sparsity,
    generate_sparse_vector,
    select_lambda,
    selection_threshold,
    soft_threshold,
    theoretical_error_bound,
)


def test_soft_threshold_examples():
    est = soft_threshold(theta_hat=np.array([2.5, -0.5, -3.0]), lam=1.0)
    np.testing.assert_allclose(est.theta_tilde, [1.5, 0.0, -2.0])
    assert est.support == {0, 2}
    theta_hat = np.array([0.3, -1.2])
    np.testing.assert_array_equal(
        soft_threshold(theta_hat=theta_hat, lam=0.0).theta_tilde, theta_hat
    )
    with pytest.raises(DomainError):
        soft_threshold(theta_hat=theta_hat, lam=-0.1)


def test_selection_threshold_examples():
    est = selection_threshold(theta_hat=np.array([2.5, 0.5, 0.0]), rho=1.0)
    np.testing.assert_array_equal(est.theta_tilde, [2.5, 0.0, 0.0])
    est = selection_threshold(theta_hat=np.array([0.1, 0.0]), rho=0.0)
    assert est.support == {0}
    with pytest.raises(DomainError):
        selection_threshold(theta_hat=np.ones(2), rho=-1.0)


def test_soft_threshold_solves_one_dimensional_program():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        theta_hat = float(rng.normal(scale=3.0))
        lam = float(rng.exponential())
        sol = solve_l1_box(
            matrix=np.eye(1), target=np.array([theta_hat]), radius=lam
        )
        est = soft_threshold(theta_hat=np.array([theta_hat]), lam=lam)
        assert sol.x[0] == pytest.approx(est.theta_tilde[0], abs=1e-8)


def test_shrinkage_invariants_and_conditional_dominance():
    rng = np.random.default_rng(1)
    theta0 = generate_sparse_vector(
        model=SparsityModel(kind="ES", s=8), p=50
    )
    lam = 0.7
    for _ in range(100):
        theta_hat = theta0 + rng.uniform(-lam, lam, size=50)
        est = soft_threshold(theta_hat=theta_hat, lam=lam)
        tilde = est.theta_tilde
        assert np.all(np.abs(tilde) <= np.abs(theta_hat))
        assert np.all(np.abs(tilde - theta_hat) <= lam + 1e-12)
        assert np.all(np.abs(tilde) <= np.abs(theta0) + 1e-12)
        assert np.all(np.abs(tilde - theta0) <= 2 * lam + 1e-12)


def test_select_lambda_modes():
    ideal = select_lambda(mode="ideal_noise", alpha=0.1, n=100, p=1000)
    assert ideal == pytest.approx(0.3890592, abs=1e-7)
    # Rademacher columns have E_n Z^2 = 1
    signs = np.where(np.random.default_rng(2).random((100, 1000)) < 0.5, 1, -1)
    prob = MamProblem(theta_hat=np.zeros(1000), influence=signs)
    assert select_lambda(
        mode="self_normalized", alpha=0.1, prob=prob
    ) == pytest.approx(ideal)
    zero = MamProblem(theta_hat=np.zeros(3), influence=np.zeros((10, 3)))
    assert select_lambda(mode="bootstrap", alpha=0.1, prob=zero) == 0.0


def test_select_lambda_missing_inputs():
    with pytest.raises(DomainError):
        select_lambda(mode="ideal_noise", alpha=0.1, n=100)
    with pytest.raises(DomainError):
        select_lambda(mode="self_normalized", alpha=0.1)
    with pytest.raises(DomainError):
        select_lambda(
            mode="oracle",
            alpha=0.1,
            prob=MamProblem(theta_hat=np.zeros(1), influence=np.ones((2, 1))),
        )


def test_theoretical_error_bound_examples():
    es = SparsityModel(kind="ES", s=5)
    assert theoretical_error_bound(model=es, lam=0.1, q=2) == pytest.approx(
        0.4472136, abs=1e-7
    )
    dm = SparsityModel(kind="DM", K=10.0)
    assert theoretical_error_bound(model=dm, lam=0.1, q=1) == pytest.approx(
        20.0
    )
    as_model = SparsityModel(kind="AS", A=10.0, a=1.5)
    assert effective_sparsity(model=as_model, lam=0.1) == 22
    assert theoretical_error_bound(
        model=as_model, lam=0.1, q=2
    ) == pytest.approx(2.81425, abs=1e-5)


def test_theoretical_error_bound_ranges():
    as_model = SparsityModel(kind="AS", A=10.0, a=1.5)
    with pytest.raises(DomainError):
        theoretical_error_bound(model=as_model, lam=20.0, q=2)
    with pytest.raises(DomainError):
        theoretical_error_bound(
            model=SparsityModel(kind="ES"), lam=0.1, q=0.5
        )
    with pytest.raises(DomainError):
        SparsityModel(kind="AS", a=0.4)


def test_generate_sparse_vectors():
    es = generate_sparse_vector(model=SparsityModel(kind="ES", s=8), p=10)
    assert es[0] == pytest.approx(50.0)
    assert es[7] == pytest.approx(2.20971, abs=1e-5)
    assert es[8] == 0.0
    as_vec = generate_sparse_vector(model=SparsityModel(kind="AS"), p=10)
    assert as_vec[3] == pytest.approx(1.25)
    dm_model = SparsityModel(kind="DM", K=10.0)
    dm = generate_sparse_vector(model=dm_model, p=200, rng=Rng(seed=4))
    assert np.sum(np.abs(dm)) <= 10.0 + 1e-9
    # Check the rearrangement is nondecreasing
    assert np.all(np.diff(dm) >= 0)
    with pytest.raises(DomainError):
        generate_sparse_vector(model=dm_model, p=200)


def test_error_bound_holds_on_es_simulations():
    """
    Test level: integration
    """
    model = SparsityModel(kind="ES", s=8)
    theta0 = generate_sparse_vector(model=model, p=100)
    alpha, n_rep, holds = 0.1, 300, 0
    lam = select_lambda(mode="ideal_noise", alpha=alpha, n=1, p=100)
    for r in range(n_rep):
        noise = Rng(seed=10).fork(r).standard_normal(size=100)
        est = soft_threshold(theta_hat=theta0 + noise, lam=lam)
        error = float(np.sum((est.theta_tilde - theta0) ** 2) ** 0.5)
        holds += error <= theoretical_error_bound(model=model, lam=lam, q=2)
    # Check against 1 - alpha minus two MC standard errors
    assert holds / n_rep >= 1 - alpha - 2 * math.sqrt(0.09 / n_rep)
