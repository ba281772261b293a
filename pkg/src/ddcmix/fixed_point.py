"""Fixed-point equations for the nuisance block and their truncated solvers.

Four representations are available:

* policy valuation, ``(I - beta F_P) V = b``, and its theta-free W form;
* the smoothed Bellman operator on integrated values;
* the Euler operator on conditional-value differences (single agent,
  lagged-action state, action-free exogenous transition);
* the EPL quasi-Newton system on stacked conditional values.

All integrated values include the constant ``model.value_shift`` so that
the representations agree exactly, not just up to a constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, InputError
from .linalg import (
    INF,
    LinearOperator,
    anderson_accelerate,
    gmres,
    kron_matvec,
    newton_kantorovich,
    successive_approx,
)
from .model import (
    ExpectedTransition,
    MixtureDDCModel,
    _type_ccp,
    ccp_entropy,
    expected_basis,
    expected_values,
    logit_ccp,
    policy_transition,
    rival_weights,
    social_surplus,
)
from .transition import LaggedActionTransition

ALGORITHMS = ("SA", "GMRES", "Newton", "Anderson")


def _theta(model, theta, m):
    if theta is None:
        return model.type_params[m]
    return np.asarray(theta, dtype=np.float64)


# ---------------------------------------------------------------- policy valuation


def policy_valuation_system(model: MixtureDDCModel, firm: int, m: int, theta, P):
    """``(A, b)`` with ``A = I - beta F_P`` and ``b = sum_a P (u - log P) + shift``."""
    Pm = _type_ccp(P, m)
    W = rival_weights(model, Pm)
    phibar = expected_basis(model, W)[firm]
    u = phibar @ _theta(model, theta, m)
    b = np.einsum("xa,xa->x", Pm[firm], u) + ccp_entropy(Pm[firm]) + model.value_shift
    A = policy_transition(model, Pm).identity_minus(model.beta)
    return A, b


def w_components_rhs(model: MixtureDDCModel, P, W=None, phibar=None):
    """Right-hand sides ``(X, J*(d+1))``; firm ``j`` owns columns ``j*(d+1):(j+1)*(d+1)``.

    The last column of each firm block is the entropy system.
    """
    if W is None:
        W = rival_weights(model, P)
    if phibar is None:
        phibar = expected_basis(model, W)
    J, X, d = model.n_firms, model.n_states, model.n_params
    B = np.empty((X, J, d + 1))
    B[:, :, :d] = np.einsum("jxa,jxad->xjd", P, phibar)
    B[:, :, d] = (ccp_entropy(P) + model.value_shift).T
    return B.reshape(X, J * (d + 1))


def w_components_system(model: MixtureDDCModel, firm: int, m: int, P):
    """Shared operator and the ``(X, d+1)`` block of right-hand sides for ``firm``.

    Columns ``0..d-1`` are the feature systems, column ``d`` the entropy
    system (which carries the constant value shift).
    """
    if not model.linear:
        raise ConfigError("the W-component system requires utility linear in parameters")
    Pm = _type_ccp(P, m)
    A = policy_transition(model, Pm).identity_minus(model.beta)
    B = w_components_rhs(model, Pm)
    d = model.n_params
    return A, B[:, firm * (d + 1) : (firm + 1) * (d + 1)]


def deflated_policy_operator(model: MixtureDDCModel, P) -> LinearOperator:
    """``I - beta (F_P - 1 nu')`` with ``nu`` uniform.

    ``F_P`` maps constants to themselves, so ``I - beta F_P`` has the
    eigenvalue ``1 - beta`` on the constant vector.  Subtracting the rank-one
    term moves that eigenvalue to 1 and leaves the others in place, which
    keeps short Krylov runs useful when beta is close to 1.  Recover the
    policy value with :func:`restore_constant`.
    """
    F = policy_transition(model, P)
    beta = model.beta

    def apply(U):
        return U - beta * (F.apply(U) - U.mean(axis=0, keepdims=True))

    return LinearOperator(model.n_states, apply)


def restore_constant(U, beta: float) -> np.ndarray:
    """Map a solution of the deflated system back to ``(I - beta F_P) V = b``."""
    U = np.asarray(U, dtype=np.float64)
    return U + beta * U.mean(axis=0, keepdims=True) / (1.0 - beta)


def reconstruct_value(theta, W_block) -> np.ndarray:
    """``V = sum_l theta_l W_l + W_P`` from an ``(X, d+1)`` block."""
    W_block = np.asarray(W_block)
    return W_block[:, :-1] @ np.asarray(theta, dtype=np.float64) + W_block[:, -1]


# ---------------------------------------------------------------- Bellman


def bellman_apply(model: MixtureDDCModel, firm: int, m: int, theta, P, V) -> np.ndarray:
    """One application of the smoothed Bellman operator for ``firm``.

    Rivals' play (games) is fixed at ``P``.
    """
    Pm = _type_ccp(P, m)
    W = rival_weights(model, Pm)
    phibar = expected_basis(model, W)[firm]
    V = np.asarray(V, dtype=np.float64)
    VV = np.zeros((model.n_firms, model.n_states))
    VV[firm] = V
    ev = expected_values(model, W, VV)[firm]
    return social_surplus(phibar @ _theta(model, theta, m) + model.beta * ev) + model.value_shift


# ---------------------------------------------------------------- Euler


@dataclass
class EulerSetup:
    """Precomputed pieces of the Euler operator for one model."""

    factors: list
    n_lag: int
    n_exo: int
    basis_diff: np.ndarray  # (X, A, d)


def euler_setup(model: MixtureDDCModel) -> EulerSetup:
    kern = model.transition
    if (
        model.n_firms != 1
        or not isinstance(kern, LaggedActionTransition)
        or not kern.exogenous_is_action_free
        or kern.n_lag != model.n_actions
    ):
        raise ConfigError(
            "Euler mapping needs a single agent whose endogenous state is exactly the "
            "lagged action and whose exogenous transition does not depend on actions"
        )
    A, d = model.n_actions, model.n_params
    nx = kern.n_exo
    factors = kern.exo_factors[0]
    phi = model.basis[0]  # (X, A, d)
    at0 = phi.reshape(A, nx, A, d)[:, :, 0, :]  # phi((lag, z'), 0)
    diff_next = at0 - at0[0]  # (A_lag, nx, d)
    cont = kron_matvec(factors, diff_next.transpose(1, 0, 2).reshape(nx, A * d)).reshape(nx, A, d)
    cb = phi - phi[:, :1, :] + model.beta * np.broadcast_to(cont[None], (A, nx, A, d)).reshape(A * nx, A, d)
    return EulerSetup(factors, A, nx, cb)


def euler_apply(model: MixtureDDCModel, m: int, theta, vtilde, setup: EulerSetup | None = None):
    """One application of the Euler operator to value differences ``(X, A)``."""
    es = setup or euler_setup(model)
    vt = np.asarray(vtilde, dtype=np.float64)
    if vt.shape != (model.n_states, model.n_actions):
        raise InputError(f"value differences must have shape {(model.n_states, model.n_actions)}")
    return _euler_map(model, es, _theta(model, theta, m), vt)


def _euler_map(model, es: EulerSetup, theta, vt):
    A, nx = es.n_lag, es.n_exo
    S = social_surplus(vt).reshape(A, nx)
    KD = kron_matvec(es.factors, (S - S[0]).T)  # (nx, A)
    return es.basis_diff @ theta + model.beta * np.tile(KD, (A, 1))


def _euler_transport(model, es: EulerSetup, r):
    """``beta * K(r(a, .) - r(0, .))`` for per-state values ``r`` of shape ``(X, k)``."""
    A, nx = es.n_lag, es.n_exo
    k = r.shape[1]
    r = r.reshape(A, nx, k)
    diff = r - r[0]
    KD = kron_matvec(es.factors, diff.transpose(1, 0, 2).reshape(nx, A * k)).reshape(nx, A, k)
    return model.beta * np.tile(KD, (A, 1, 1))


def _euler_tangent(model, es: EulerSetup, P, dv):
    """Derivative of the surplus part of the Euler map in direction ``dv`` ``(X, A, k)``."""
    return _euler_transport(model, es, np.einsum("xa,xak->xk", P, dv))


# ---------------------------------------------------------------- EPL


@dataclass
class EPLPoint:
    """Quantities of the EPL mapping evaluated at conditional values ``v``."""

    v: np.ndarray  # (J, X, A)
    P: np.ndarray
    W: np.ndarray  # (J, X, C)
    phibar: np.ndarray  # (J, X, A, d)
    cont: np.ndarray  # (J, X, C): beta * E[S_j + shift | x, c]
    flat: int = field(init=False)

    def __post_init__(self):
        self.flat = self.v.size


def epl_point(model: MixtureDDCModel, v) -> EPLPoint:
    v = np.asarray(v, dtype=np.float64)
    P = logit_ccp(v)
    W = rival_weights(model, P)
    phibar = expected_basis(model, W)
    S = social_surplus(v) + model.value_shift  # (J, X)
    cont = model.beta * np.moveaxis(model.transition.expect(S.T), 2, 0)  # (J, X, C)
    return EPLPoint(v, P, W, phibar, cont)


def _average_over_rivals(model, W, values):
    """``sum_c W_j[x,c] sel_j[c,a] values[j,x,c,...]`` for every firm."""
    J = model.n_firms
    extra = values.shape[3:]
    vals = values.reshape(values.shape[:3] + (-1,))
    out = np.empty((J, model.n_states, model.n_actions, vals.shape[3]))
    for j in range(J):
        out[j] = np.einsum("xck,ca->xak", W[j][:, :, None] * vals[j], model.own_selector[j])
    return out.reshape((J, model.n_states, model.n_actions) + extra)


def epl_phi(model: MixtureDDCModel, theta, v, point: EPLPoint | None = None) -> np.ndarray:
    """``Phi(theta, v)`` over ``(J, X, A)``."""
    pt = point or epl_point(model, v)
    flow = model.basis @ np.asarray(theta, dtype=np.float64)  # (J, X, C)
    return _average_over_rivals(model, pt.W, flow + pt.cont)


def epl_continuation(model: MixtureDDCModel, point: EPLPoint) -> np.ndarray:
    """The theta-free part of ``Phi``."""
    return _average_over_rivals(model, point.W, point.cont)


def epl_jvp(model: MixtureDDCModel, theta, point: EPLPoint, delta) -> np.ndarray:
    """Jacobian of ``Phi(theta, .)`` at ``point.v`` applied to ``delta``.

    ``delta`` has shape ``(J, X, A)`` or ``(J, X, A, k)``.
    """
    J, X, A, C = model.n_firms, model.n_states, model.n_actions, model.n_profiles
    delta = np.asarray(delta, dtype=np.float64)
    single = delta.ndim == 3
    dl = delta[..., None] if single else delta
    k = dl.shape[3]
    P = point.P
    D = dl - np.einsum("jxa,jxak->jxk", P, dl)[:, :, None, :]
    dS = np.einsum("jxa,jxak->jxk", P, dl)  # (J, X, k)
    EdS = model.transition.expect(np.moveaxis(dS, 0, -1).reshape(X, k * J)).reshape(X, C, k, J)
    EdS = np.moveaxis(EdS, 3, 0)  # (J, X, C, k)
    out = model.beta * EdS
    if J > 1:
        prof = model.profiles
        Dc = np.stack([D[j][:, prof[:, j], :] for j in range(J)])  # (J, X, C, k)
        total = Dc.sum(axis=0)
        psi = model.basis @ np.asarray(theta, dtype=np.float64) + point.cont  # (J, X, C)
        out = out + (total[None] - Dc) * psi[..., None]
    res = _average_over_rivals(model, point.W, out)
    return res[..., 0] if single else res


def epl_operator(model: MixtureDDCModel, theta_tilde, point: EPLPoint) -> LinearOperator:
    """``I - dPhi(theta_tilde, v)`` on flattened ``(J*X*A,)`` vectors (or blocks)."""
    J, X, A = model.n_firms, model.n_states, model.n_actions
    n = J * X * A

    def apply(y):
        shaped = y.reshape((J, X, A) + y.shape[1:])
        return y - epl_jvp(model, theta_tilde, point, shaped).reshape(y.shape)

    return LinearOperator(n, apply)


def epl_system(model: MixtureDDCModel, m: int, theta_tilde, v_prev, theta):
    """Operator ``I - dPhi(theta_tilde, v_prev)`` and rhs ``v_prev - Phi(theta, v_prev)``.

    Solving ``A Y = rhs`` and setting ``v = v_prev - Y`` completes one step.
    """
    pt = epl_point(model, v_prev)
    A = epl_operator(model, _theta(model, theta_tilde, m), pt)
    rhs = (pt.v - epl_phi(model, _theta(model, theta, m), pt.v, pt)).ravel()
    return A, rhs


def epl_components_system(model: MixtureDDCModel, theta_tilde, v_prev):
    """Theta-free EPL system with ``d + 1`` right-hand sides.

    With linear utility ``Phi(theta, v) = phibar theta + cont(v)``, so the
    single-theta solution is ``Y = Y[:, d] - Y[:, :d] @ theta`` where column
    ``d`` solves against ``v - cont`` and columns ``:d`` against ``phibar``.
    Returns ``(A, B, point)``.
    """
    if not model.linear:
        raise ConfigError("the stacked EPL system requires utility linear in parameters")
    pt = epl_point(model, v_prev)
    A = epl_operator(model, np.asarray(theta_tilde, dtype=np.float64), pt)
    d, n = model.n_params, pt.v.size
    B = np.empty((n, d + 1))
    B[:, :d] = pt.phibar.reshape(n, d)
    B[:, d] = (pt.v - epl_continuation(model, pt)).ravel()
    return A, B, pt


# ---------------------------------------------------------------- truncated solvers


@dataclass
class FixedPointProblem:
    """A mapping ``Y -> G(Y)`` with optional linear-system and Jacobian views."""

    mapping: Callable[[np.ndarray], np.ndarray]
    shape: tuple
    separable: bool
    kind: str
    linear_system: tuple | None = None  # (A, b) with Y shaped like b
    jacobian: Callable[[np.ndarray], LinearOperator] | None = None
    context: dict = field(default_factory=dict)


def linear_problem(A: LinearOperator, b, kind: str, separable: bool = True, **context) -> FixedPointProblem:
    """Wrap ``A Y = b`` as the fixed point ``Y = b + (I - A) Y``."""
    b = np.asarray(b, dtype=np.float64)
    shape = b.shape

    def G(Y):
        return b + Y - A.apply(Y)

    n = int(np.prod(shape))
    flat_jac = LinearOperator(n, lambda x: _flat_apply(A, shape, x))

    def jac(Y):
        return flat_jac

    return FixedPointProblem(G, shape, separable, kind, (A, b), jac, dict(context))


def _flat_apply(A, shape, x):
    """``(I - A)`` on flattened blocks of ``shape``."""
    if x.ndim == 1:
        Y = x.reshape(shape)
        return (Y - A.apply(Y)).ravel()
    k = x.shape[1]
    out = np.empty_like(x)
    for c in range(k):
        Y = x[:, c].reshape(shape)
        out[:, c] = (Y - A.apply(Y)).ravel()
    return out


def pv_problem(model, firm, m, theta, P) -> FixedPointProblem:
    A, b = policy_valuation_system(model, firm, m, theta, P)
    return linear_problem(A, b, "value", separable=False, firm=firm, type=m)


def w_problem(model, firm, m, P) -> FixedPointProblem:
    A, B = w_components_system(model, firm, m, P)
    return linear_problem(A, B, "w_components", separable=True, firm=firm, type=m)


def bellman_problem(model, firm, m, theta, P) -> FixedPointProblem:
    Pm = _type_ccp(P, m)
    W = rival_weights(model, Pm)
    phibar = expected_basis(model, W)[firm]
    u = phibar @ _theta(model, theta, m)

    F = ExpectedTransition(model, firm, W[firm])
    beta, shift = model.beta, model.value_shift

    def G(V):
        return social_surplus(u + beta * F.apply(V)) + shift

    def jac(V):
        Pv = logit_ccp(u + beta * F.apply(V))

        def apply(x):
            ev = F.apply(x)
            if ev.ndim == 2:
                return beta * np.einsum("xa,xa->x", Pv, ev)
            return beta * np.einsum("xa,xak->xk", Pv, ev)

        return LinearOperator(model.n_states, apply)

    return FixedPointProblem(G, (model.n_states,), False, "value", None, jac, {"firm": firm, "type": m})


def euler_problem(model, m, theta) -> FixedPointProblem:
    es = euler_setup(model)
    th = _theta(model, theta, m)
    shape = (model.n_states, model.n_actions)

    def G(vt):
        return _euler_map(model, es, th, vt)

    def jac(vt):
        P = logit_ccp(vt)

        def apply(x):
            if x.ndim == 1:
                return _euler_tangent(model, es, P, x.reshape(shape)[:, :, None])[:, :, 0].ravel()
            k = x.shape[1]
            return _euler_tangent(model, es, P, x.reshape(shape + (k,))).reshape(-1, k)

        return LinearOperator(int(np.prod(shape)), apply)

    return FixedPointProblem(G, shape, False, "cond_value_diff", None, jac, {"type": m})


def epl_problem(model, m, theta_tilde, v_prev, theta) -> FixedPointProblem:
    A, rhs = epl_system(model, m, theta_tilde, v_prev, theta)
    return linear_problem(A, rhs, "cond_values", separable=False, type=m)


def epl_components_problem(model, theta_tilde, v_prev) -> FixedPointProblem:
    A, B, _ = epl_components_system(model, theta_tilde, v_prev)
    return linear_problem(A, B, "cond_values", separable=True)


def make_gamma(problem: FixedPointProblem, algorithm: str, q=INF, tol: float = 1e-8, memory: int = 5):
    """Truncated solver ``Y0 -> (Y, report)`` running at most ``q`` iterations."""
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}")
    if algorithm == "GMRES":
        if problem.linear_system is None:
            raise ConfigError(f"GMRES needs a linear system; {problem.kind} problem is nonlinear")
        A, b = problem.linear_system
        return lambda Y0: gmres(A, b, Y0, q, tol)
    if algorithm == "Newton":
        if problem.jacobian is None:
            raise ConfigError(f"Newton needs a Jacobian for the {problem.kind} problem")
        return lambda Y0: newton_kantorovich(problem.mapping, problem.jacobian, Y0, q, tol)
    if algorithm == "Anderson":
        return lambda Y0: anderson_accelerate(problem.mapping, Y0, q, memory, tol)
    return lambda Y0: successive_approx(problem.mapping, Y0, q, tol)
