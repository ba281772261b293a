"""Property-based checks of the structural invariants."""

from functools import reduce

import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import sparse

from ddcmix.dgp import EntryGameSpec, build_entry_game_model, simulate_panel
from ddcmix.estimator import e_step, match_labels
from ddcmix.fixed_point import make_gamma, pv_problem, w_components_system, w_problem
from ddcmix.harness import replication_seed
from ddcmix.linalg import (
    INF,
    KroneckerOperator,
    LinearOperator,
    anderson_accelerate,
    gmres,
    kron_matvec,
    successive_approx,
)
from ddcmix.model import (
    Ar1Spec,
    MixtureDDCModel,
    logit_ccp,
    rival_expectation,
    social_surplus,
    tauchen_discretize,
)
from ddcmix.transition import DenseTransition

seeds = st.integers(0, 2**32 - 1)
finite = st.floats(-30, 30, allow_nan=False)
value_rows = st.integers(2, 6).flatmap(lambda k: arrays(np.float64, (k,), elements=finite))


def _stochastic(rng, n):
    F = rng.uniform(size=(n, n))
    return F / F.sum(axis=1, keepdims=True)


def _random_model(seed, X, A, d, beta):
    rng = np.random.default_rng(seed)
    F = rng.uniform(size=(A, X, X)) ** 3
    F /= F.sum(axis=2, keepdims=True)
    basis = rng.normal(size=(1, X, A, d))
    theta = rng.normal(size=(1, d))
    return MixtureDDCModel(basis, DenseTransition(F), beta, A, theta, np.array([1.0]))


# ------------------------------------------------------------------ linear algebra


@given(st.lists(st.integers(1, 4), min_size=1, max_size=3), st.integers(0, 3), seeds)
def test_kron_matvec_matches_dense(dims, cols, seed):
    rng = np.random.default_rng(seed)
    factors = [rng.normal(size=(L, L)) for L in dims]
    n = int(np.prod(dims))
    v = rng.normal(size=(n, cols) if cols else n)
    dense = reduce(np.kron, factors)
    expect = dense @ v
    got = kron_matvec(factors, v)
    scale = np.abs(dense).sum(axis=1).max() * np.abs(v).max()
    np.testing.assert_allclose(got, expect, rtol=0, atol=1e-12 * max(scale, 1.0))


@settings(max_examples=40)
@given(st.integers(2, 60), st.floats(0.0, 0.99), seeds)
def test_gmres_residuals_never_increase(n, rho, seed):
    rng = np.random.default_rng(seed)
    A = LinearOperator.from_matrix(np.eye(n) - rho * _stochastic(rng, n))
    _, rep = gmres(A, rng.normal(size=n), rng.normal(size=n), INF, 0.0)
    h = np.array(rep.history)
    assert np.all(np.diff(h) <= 1e-12 * h[0])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 200), st.floats(0.0, 0.95), seeds)
def test_gmres_full_dimension_matches_direct(n, rho, seed):
    rng = np.random.default_rng(seed)
    M = np.eye(n) - rho * _stochastic(rng, n)
    b = rng.normal(size=n)
    y, _ = gmres(LinearOperator.from_matrix(M), b, None, n, 0.0)
    direct = np.linalg.solve(M, b)
    np.testing.assert_allclose(y, direct, rtol=0, atol=1e-10 * max(1.0, np.abs(direct).max()))


@given(st.integers(1, 30), st.floats(0.05, 0.95), st.integers(1, 25), seeds)
def test_successive_approx_geometric_bound(n, rho, q, seed):
    rng = np.random.default_rng(seed)
    R = rho * _stochastic(rng, n) * rng.choice([-1.0, 1.0], size=(n, n))  # sup-norm modulus <= rho
    c = rng.normal(size=n)
    y_star = np.linalg.solve(np.eye(n) - R, c)
    y0 = rng.normal(size=n) * 5
    y, _ = successive_approx(lambda y: R @ y + c, y0, q, 0.0)
    bound = rho**q * np.abs(y0 - y_star).max()
    assert np.abs(y - y_star).max() <= bound + 1e-12 * max(1.0, np.abs(y_star).max())


@given(st.integers(1, 20), seeds, st.sampled_from(["gmres", "sa", "anderson"]))
def test_solvers_leave_inputs_untouched_and_repeat(n, seed, which):
    rng = np.random.default_rng(seed)
    M = 0.5 * _stochastic(rng, n)
    b, y0 = rng.normal(size=n), rng.normal(size=n)
    b_copy, y0_copy = b.copy(), y0.copy()
    if which == "gmres":
        run = lambda: gmres(LinearOperator.from_matrix(np.eye(n) - M), b, y0, 5, 1e-10)[0]
    elif which == "sa":
        run = lambda: successive_approx(lambda y: M @ y + b, y0, 5, 1e-10)[0]
    else:
        run = lambda: anderson_accelerate(lambda y: M @ y + b, y0, 5, 3, 1e-10)[0]
    first, second = run(), run()
    assert np.array_equal(first, second)
    assert np.array_equal(b, b_copy) and np.array_equal(y0, y0_copy)


# ------------------------------------------------------------------ logit primitives


@given(value_rows)
def test_logit_sums_to_one(v):
    assert abs(logit_ccp(v).sum() - 1.0) <= 1e-12


@given(value_rows, st.floats(-1e3, 1e3))
def test_logit_shift_invariant(v, c):
    np.testing.assert_allclose(logit_ccp(v + c), logit_ccp(v), atol=1e-12)


@given(value_rows)
def test_surplus_bounds(v):
    gap = social_surplus(v) - v.max()
    assert -1e-12 <= gap <= np.log(v.size) + 1e-12


@given(st.integers(2, 6).flatmap(lambda k: arrays(np.float64, (k,), elements=st.floats(-10, 10))))
def test_logit_is_surplus_gradient(v):
    h = 1e-6
    grad = np.array([(social_surplus(v + h * e) - social_surplus(v - h * e)) / (2 * h) for e in np.eye(v.size)])
    np.testing.assert_allclose(logit_ccp(v), grad, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 3), seeds)
def test_rival_expectation_rows_are_distributions(J, seed):
    model = build_entry_game_model(EntryGameSpec(n_firms=J))
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.01, 0.99, size=(1, J, model.n_states, 1))
    P = np.concatenate([1 - p, p], axis=-1)
    firm = int(rng.integers(J))
    _, F = rival_expectation(model, firm, 0, P)
    ones = F.apply(np.ones(model.n_states))
    np.testing.assert_allclose(ones, 1.0, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(2, 5), st.floats(-0.95, 0.95), st.floats(0.05, 2.0)),
                min_size=1, max_size=3))
def test_tauchen_kronecker_preserves_mass(parts):
    factors = [tauchen_discretize(Ar1Spec(0.0, r, s, n))[1][0] for n, r, s in parts]
    op = KroneckerOperator(factors)
    np.testing.assert_allclose(op.apply(np.ones(op.dimension)), 1.0, atol=1e-10)


# ------------------------------------------------------------------ fixed points


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(seeds, st.integers(2, 12), st.integers(2, 3), st.floats(0.0, 0.98),
       st.sampled_from([("pv", "GMRES"), ("pv", "SA"), ("w", "GMRES"), ("w", "SA")]))
def test_converged_output_is_a_fixed_point(seed, X, A, beta, combo):
    model = _random_model(seed, X, A, 2, beta)
    rng = np.random.default_rng(seed + 1)
    P = logit_ccp(rng.normal(size=(1, X, A)))
    rep, alg = combo
    problem = pv_problem(model, 0, 0, model.type_params[0], P) if rep == "pv" else w_problem(model, 0, 0, P)
    gamma = make_gamma(problem, alg, INF, 1e-11)
    Y, report = gamma(np.zeros(problem.shape))
    assume(report.converged)
    resid = np.abs(Y - problem.mapping(Y)).max()
    assert resid <= 1e-8


@settings(max_examples=25, deadline=None)
@given(seeds, st.integers(2, 10), st.floats(0.0, 0.98))
def test_w_system_ignores_theta(seed, X, beta):
    model = _random_model(seed, X, 2, 3, beta)
    rng = np.random.default_rng(seed + 7)
    P = logit_ccp(rng.normal(size=(1, X, 2)))
    other = model.with_types(rng.normal(size=model.type_params.shape) * 10, model.type_weights)
    A1, B1 = w_components_system(model, 0, 0, P)
    A2, B2 = w_components_system(other, 0, 0, P)
    assert np.array_equal(B1, B2)
    x = rng.normal(size=(X, 4))
    assert np.array_equal(A1.apply(x), A2.apply(x))


# ------------------------------------------------------------------ estimator pieces


@given(seeds, st.integers(1, 4), st.integers(1, 30), st.sampled_from([1.0, 3.0, 40.0]))
def test_e_step_rows_normalize_and_weights_stay_interior(seed, M, N, spread):
    rng = np.random.default_rng(seed)
    X, A = 4, 2
    counts = sparse.csr_matrix(rng.integers(0, 6, size=(N, X * A)).astype(float))
    P = logit_ccp(rng.normal(size=(M, 1, X, A)) * spread)
    pi = rng.dirichlet(np.ones(M))
    resp, pi_new, ll = e_step(counts, P, pi)
    np.testing.assert_allclose(resp.sum(axis=1), 1.0, atol=1e-12)
    # on the simplex, interior means every weight is positive
    assert np.all(pi_new > 0)
    assert pi_new.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.isfinite(ll)


@given(seeds, st.integers(1, 5), st.integers(1, 4))
def test_match_labels_never_worse_than_identity(seed, M, d):
    rng = np.random.default_rng(seed)
    theta_true, theta = rng.normal(size=(M, d)), rng.normal(size=(M, d))
    pi_true, pi = rng.dirichlet(np.ones(M)), rng.dirichlet(np.ones(M))
    perm, mse = match_labels(theta, pi, theta_true, pi_true)
    identity = np.sum((theta - theta_true) ** 2) + np.sum((pi - pi_true) ** 2)
    assert sorted(perm) == list(range(M))
    assert mse <= identity + 1e-12


# ------------------------------------------------------------------ reproducibility


@settings(max_examples=10, deadline=None)
@given(seeds, st.integers(1, 40), st.integers(1, 6))
def test_simulation_is_a_pure_function_of_seed(seed, N, T):
    model = build_entry_game_model(EntryGameSpec(n_firms=2))
    rng = np.random.default_rng(0)
    p = rng.uniform(0.1, 0.9, size=(1, 2, model.n_states, 1))
    P = np.concatenate([1 - p, p], axis=-1)
    a = simulate_panel(model, P, np.array([1.0]), N, T, seed, 3)
    b = simulate_panel(model, P, np.array([1.0]), N, T, seed, 3)
    assert np.array_equal(a.actions, b.actions) and np.array_equal(a.states, b.states)


@given(st.integers(0, 2**62), st.integers(0, 10_000))
def test_replication_seed_pure(master, rep):
    assert replication_seed(master, rep) == replication_seed(master, rep)
    assert replication_seed(master, rep) != replication_seed(master, rep + 1)
