import numpy as np
import pytest

from ddcmix.errors import DimensionError, DivergenceError, InputError
from ddcmix.linalg import (
    INF,
    KroneckerOperator,
    LinearOperator,
    anderson_accelerate,
    bb_step_size,
    gmres,
    kron_matvec,
    newton_kantorovich,
    resolve_cap,
    successive_approx,
)


def _stochastic(rng, n):
    F = rng.uniform(size=(n, n))
    return F / F.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------- Kronecker


def test_kron_identity_factors():
    out = kron_matvec([np.eye(2), np.eye(2)], np.array([1.0, 2, 3, 4]))
    np.testing.assert_array_equal(out, [1, 2, 3, 4])


def test_kron_single_factor_is_plain_matvec():
    np.testing.assert_array_equal(kron_matvec([np.array([[0.0, 1], [1, 0]])], np.array([3.0, 7])), [7, 3])


def test_kron_matches_dense_two_factors():
    rng = np.random.default_rng(0)
    F1, F2 = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    v = rng.normal(size=9)
    np.testing.assert_allclose(kron_matvec([F1, F2], v), np.kron(F1, F2) @ v, rtol=0, atol=1e-12)


def test_kron_dimension_mismatch_names_lengths():
    with pytest.raises(DimensionError, match="expected vector of length 4, got 5"):
        kron_matvec([np.eye(2), np.eye(2)], np.ones(5))


def test_kron_operator_keeps_ones_for_stochastic_factors():
    rng = np.random.default_rng(1)
    K = KroneckerOperator([_stochastic(rng, 3), _stochastic(rng, 4), _stochastic(rng, 2)])
    assert K.dimension == 24
    np.testing.assert_allclose(K.apply(np.ones(24)), np.ones(24), atol=1e-12)
    np.testing.assert_allclose(K.dense(), K.apply(np.eye(24)), atol=1e-12)


def test_kron_handles_column_blocks():
    rng = np.random.default_rng(2)
    F = [rng.normal(size=(2, 2)), rng.normal(size=(3, 3))]
    V = rng.normal(size=(6, 4))
    np.testing.assert_allclose(kron_matvec(F, V), np.kron(*F) @ V, atol=1e-12)


# ---------------------------------------------------------------- GMRES


def test_gmres_identity_one_iteration():
    b = np.array([1.0, -2.0, 3.0])
    y, rep = gmres(LinearOperator.from_matrix(np.eye(3)), b, np.zeros(3), INF, 1e-12)
    np.testing.assert_allclose(y, b)
    assert rep.iterations_used == 1
    assert rep.final_residual_norm == pytest.approx(0.0, abs=1e-14)
    assert rep.converged


def test_gmres_full_krylov_is_exact():
    rng = np.random.default_rng(3)
    n = 30
    M = np.eye(n) + 0.3 * rng.normal(size=(n, n))
    b = rng.normal(size=n)
    y, rep = gmres(LinearOperator.from_matrix(M), b, None, n, 0.0)
    np.testing.assert_allclose(y, np.linalg.solve(M, b), atol=1e-10)
    assert rep.iterations_used <= n


def test_gmres_residuals_non_increasing():
    rng = np.random.default_rng(4)
    n = 80
    A = LinearOperator.from_matrix(np.eye(n) - 0.95 * _stochastic(rng, n))
    _, rep = gmres(A, rng.normal(size=n), None, INF, 1e-12)
    h = np.array(rep.history)
    assert np.all(np.diff(h) <= 1e-12 * h[0])


def test_gmres_truncation_respects_cap():
    rng = np.random.default_rng(5)
    A = LinearOperator.from_matrix(np.eye(50) - 0.9 * _stochastic(rng, 50))
    _, rep = gmres(A, rng.normal(size=50), None, 3, 1e-14)
    assert rep.iterations_used <= 3


def test_gmres_rejects_non_finite_rhs():
    with pytest.raises(InputError):
        gmres(LinearOperator.from_matrix(np.eye(2)), np.array([1.0, np.nan]))


def test_gmres_block_rhs_matches_columns():
    rng = np.random.default_rng(6)
    M = np.eye(20) - 0.9 * _stochastic(rng, 20)
    B = rng.normal(size=(20, 3))
    Y, _ = gmres(LinearOperator.from_matrix(M), B, None, INF, 1e-13)
    np.testing.assert_allclose(Y, np.linalg.solve(M, B), atol=1e-10)


# ---------------------------------------------------------------- successive approximation


def test_sa_constant_map():
    y, rep = successive_approx(lambda y: np.array([4.0]), np.array([0.0]), INF, 1e-12)
    assert y[0] == 4.0
    # the second step confirms the iterate stopped moving
    assert rep.iterations_used <= 2


def test_sa_closed_form_iterate():
    y, rep = successive_approx(lambda y: 0.5 * y + 1, np.array([0.0]), 3, 0.0)
    assert y[0] == pytest.approx(1.75)
    assert rep.iterations_used == 3


def test_sa_divergence_carries_iteration():
    with pytest.raises(DivergenceError) as err:
        successive_approx(lambda y: y * 1e200, np.array([1e200]), 10, 0.0)
    assert err.value.iteration == 1


def test_sa_does_not_mutate_input():
    y0 = np.array([1.0, 2.0])
    successive_approx(lambda y: 0.5 * y, y0, 5, 0.0)
    np.testing.assert_array_equal(y0, [1.0, 2.0])


# ---------------------------------------------------------------- Newton


def test_newton_exact_on_affine_map():
    M = np.array([[0.5, 0.1], [0.2, 0.3]])
    c = np.array([1.0, -1.0])
    y, rep = newton_kantorovich(lambda y: M @ y + c, lambda y: LinearOperator.from_matrix(M), np.zeros(2), INF, 1e-12)
    np.testing.assert_allclose(y, np.linalg.solve(np.eye(2) - M, c), atol=1e-12)
    assert rep.iterations_used == 1


def test_newton_quadratic_decay_on_square_map():
    # G(y) = y^2 has the fixed point 0; Newton gives y_{k+1} = -y_k^2 / (1 - 2 y_k).
    # Start at 0.25: at 0.5 the system I - G'(y) is singular.
    y, rep = newton_kantorovich(
        lambda y: y**2, lambda y: LinearOperator(1, lambda x: 2 * y * x), np.array([0.25]), 5, 0.0
    )
    seq = [0.25]
    for _ in range(5):
        seq.append(-seq[-1] ** 2 / (1 - 2 * seq[-1]))
    assert y[0] == pytest.approx(seq[-1], rel=1e-9)
    errs = np.abs(seq)
    assert np.all(errs[2:] <= 1.5 * errs[1:-1] ** 2)


def test_newton_singular_system_raises():
    from ddcmix.errors import SingularSystemError

    with pytest.raises(SingularSystemError, match="Newton step 1"):
        newton_kantorovich(
            lambda y: y + 1.0, lambda y: LinearOperator.from_matrix(np.eye(2)), np.zeros(2), 3, 1e-10
        )


# ---------------------------------------------------------------- Anderson


def test_anderson_memory_zero_is_sa():
    G = lambda y: 0.7 * y + np.array([1.0, 2.0])
    ya, ra = anderson_accelerate(G, np.zeros(2), 6, 0, 0.0)
    ys, rs = successive_approx(G, np.zeros(2), 6, 0.0)
    # Anderson returns the last mapped point, which is one SA step ahead of the last residual
    np.testing.assert_allclose(ya, ys, atol=1e-14)


def test_anderson_affine_scalar():
    y, rep = anderson_accelerate(lambda y: 0.5 * y + 1, np.array([0.0]), INF, 5, 1e-12)
    assert y[0] == pytest.approx(2.0, abs=1e-12)
    assert rep.iterations_used <= 3


# ---------------------------------------------------------------- Barzilai-Borwein


def test_bb_self_inner_product():
    u = np.array([0.3, -1.2, 2.0])
    assert bb_step_size(u, u, 3, 1.0) == pytest.approx(1.0)


def test_bb_initial_step():
    assert bb_step_size(None, None, 0, 2.0) == pytest.approx(0.5)
    assert bb_step_size(None, None, 0, 0.1) == 1.0


def test_bb_formula():
    assert bb_step_size(np.array([1.0, 0]), np.array([2.0, 0]), 1, 1.0) == pytest.approx(0.5)


def test_bb_zero_inner_product_falls_back_and_flags():
    alpha, flagged = bb_step_size(np.array([1.0, 0]), np.array([0.0, 1]), 2, 4.0, return_flag=True)
    assert flagged and alpha == pytest.approx(0.25)


# ---------------------------------------------------------------- misc


def test_infinite_cap_uses_safety_factor():
    assert resolve_cap(INF, 7) == 700
    with pytest.raises(InputError):
        resolve_cap(0, 5)


def test_operator_dimension_check():
    A = LinearOperator.from_matrix(np.eye(3))
    with pytest.raises(DimensionError):
        A.apply(np.ones(4))
