"""Model container and the primitive mappings shared by all estimators.

Array conventions
-----------------
``basis``      ``(J, X, C, d)`` utility features per firm, state and joint profile
``P``          ``(J, X, A)`` choice probabilities of one type (all firms)
``CCP``        ``(M, J, X, A)`` choice probabilities of every type
``W`` weights  ``(J, X, C)`` probability of the rivals' part of profile ``c``

A joint profile ``c`` lists one action per firm, row-major with firm 0 most
significant.  States are flat indices, row-major over (lagged profile,
exogenous grid indices).
"""

from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .errors import DimensionError, InputError
from .kernels import logsumexp_rows, softmax_rows
from .linalg import LinearOperator
from .transition import TransitionKernel

EULER_GAMMA = float(np.euler_gamma)
CCP_FLOOR = 1e-12


def logit_ccp(v, floor: float = CCP_FLOOR) -> np.ndarray:
    """Logit choice probabilities over the last axis, floored and renormalized."""
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise InputError("logit_ccp: conditional values must be finite")
    shape = v.shape
    return softmax_rows(v.reshape(-1, shape[-1]), floor).reshape(shape)


def social_surplus(v):
    """Log-sum-exp over the last axis."""
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise InputError("social_surplus: conditional values must be finite")
    out = logsumexp_rows(v.reshape(-1, v.shape[-1])).reshape(v.shape[:-1])
    return float(out) if out.ndim == 0 else out


def ccp_entropy(P) -> np.ndarray:
    """``-sum_a P log P`` over the last axis with ``0 log 0 = 0``."""
    P = np.asarray(P, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(P > 0, P * np.log(np.where(P > 0, P, 1.0)), 0.0)
    return -terms.sum(axis=-1)


def floor_ccp(P, floor: float = CCP_FLOOR) -> np.ndarray:
    P = np.maximum(np.asarray(P, dtype=np.float64), floor)
    return P / P.sum(axis=-1, keepdims=True)


def action_profiles(n_firms: int, n_actions: int) -> np.ndarray:
    return np.array(list(itertools.product(range(n_actions), repeat=n_firms)), dtype=np.int64)


@dataclass(frozen=True, eq=False)
class MixtureDDCModel:
    """A finite-mixture dynamic discrete choice model (single agent or game).

    The flow utility of firm ``j`` in state ``x`` under joint profile ``c`` is
    ``basis[j, x, c] @ theta``.  With one firm, profiles are just actions.
    """

    basis: np.ndarray
    transition: TransitionKernel
    beta: float
    n_actions: int
    type_params: np.ndarray
    type_weights: np.ndarray
    param_names: tuple = ()
    state_values: np.ndarray | None = None
    state_names: tuple = ()
    include_euler_constant: bool = True
    linear: bool = True
    name: str = "model"

    def __post_init__(self):
        basis = np.array(self.basis, dtype=np.float64)
        if basis.ndim != 4:
            raise DimensionError(f"basis must have shape (J, X, C, d), got {basis.shape}")
        J, X, C, d = basis.shape
        A = int(self.n_actions)
        if A < 1 or C != A**J:
            raise DimensionError(f"basis has {C} profiles; expected {A}**{J}")
        if self.transition.n_states != X or self.transition.n_profiles != C:
            raise DimensionError(
                f"transition covers {self.transition.n_states} states / "
                f"{self.transition.n_profiles} profiles; basis has {X} / {C}"
            )
        if not 0.0 <= float(self.beta) < 1.0:
            raise InputError(f"discount factor must lie in [0, 1), got {self.beta}")
        theta = np.atleast_2d(np.array(self.type_params, dtype=np.float64))
        pi = np.atleast_1d(np.array(self.type_weights, dtype=np.float64))
        if theta.shape[1] != d:
            raise DimensionError(f"type_params have {theta.shape[1]} coordinates; basis has {d}")
        if pi.shape != (theta.shape[0],):
            raise DimensionError(f"type_weights length {pi.size} != number of types {theta.shape[0]}")
        if np.any(pi <= 0) or abs(pi.sum() - 1.0) > 1e-12:
            raise InputError("type_weights must be strictly positive and sum to 1")
        names = tuple(self.param_names) or tuple(f"theta{i}" for i in range(d))
        if len(names) != d:
            raise DimensionError(f"{len(names)} parameter names for {d} parameters")
        sv = None
        if self.state_values is not None:
            sv = np.array(self.state_values, dtype=np.float64).reshape(X, -1)
            sv.setflags(write=False)
        profiles = action_profiles(J, A)
        selector = np.zeros((J, C, A))
        for j in range(J):
            selector[j, np.arange(C), profiles[:, j]] = 1.0
        for arr in (basis, theta, pi, profiles, selector):
            arr.setflags(write=False)
        set_ = object.__setattr__
        set_(self, "basis", basis)
        set_(self, "type_params", theta)
        set_(self, "type_weights", pi)
        set_(self, "param_names", names)
        set_(self, "state_values", sv)
        set_(self, "beta", float(self.beta))
        set_(self, "n_actions", A)
        set_(self, "profiles", profiles)
        set_(self, "own_selector", selector)

    @property
    def n_firms(self) -> int:
        return self.basis.shape[0]

    @property
    def n_states(self) -> int:
        return self.basis.shape[1]

    @property
    def n_profiles(self) -> int:
        return self.basis.shape[2]

    @property
    def n_params(self) -> int:
        return self.basis.shape[3]

    @property
    def n_types(self) -> int:
        return self.type_params.shape[0]

    @property
    def value_shift(self) -> float:
        """Constant ``beta * kappa`` added to every integrated value."""
        return self.beta * EULER_GAMMA if self.include_euler_constant else 0.0

    def with_types(self, type_params, type_weights) -> "MixtureDDCModel":
        return dataclasses.replace(self, type_params=type_params, type_weights=type_weights)

    def with_beta(self, beta: float) -> "MixtureDDCModel":
        return dataclasses.replace(self, beta=beta)

    def flow_utility(self, theta) -> np.ndarray:
        """Flow utilities ``(J, X, C)`` at parameter vector ``theta``."""
        return self.basis @ np.asarray(theta, dtype=np.float64)


def check_ccp(P, model: MixtureDDCModel | None = None, tol: float = 1e-10) -> np.ndarray:
    """Validate a CCP array; returns it as float64."""
    P = np.asarray(P, dtype=np.float64)
    if model is not None:
        want = (model.n_firms, model.n_states, model.n_actions)
        if P.shape[-3:] != want:
            raise DimensionError(f"CCP array has trailing shape {P.shape[-3:]}, expected {want}")
    if not np.all(np.isfinite(P)) or np.any(P < 0):
        raise InputError("CCPs must be finite and non-negative")
    if np.max(np.abs(P.sum(axis=-1) - 1.0)) > tol:
        raise InputError("CCP rows must sum to one")
    return P


def joint_weights(model: MixtureDDCModel, P) -> np.ndarray:
    """Probability of each joint profile, ``(X, C)``."""
    prof = model.profiles
    out = np.ones((model.n_states, model.n_profiles))
    for k in range(model.n_firms):
        out *= P[k][:, prof[:, k]]
    return out


def rival_weights(model: MixtureDDCModel, P) -> np.ndarray:
    """``W[j, x, c] = prod_{k != j} P_k(c_k | x)``."""
    J = model.n_firms
    prof = model.profiles
    W = np.ones((J, model.n_states, model.n_profiles))
    if J == 1:
        return W
    for k in range(J):
        Pk = P[k][:, prof[:, k]]
        for j in range(J):
            if j != k:
                W[j] *= Pk
    return W


def expected_basis(model: MixtureDDCModel, W) -> np.ndarray:
    """Rival-averaged features ``(J, X, A, d)``."""
    if model.n_firms == 1:
        return np.asarray(model.basis)
    out = np.empty((model.n_firms, model.n_states, model.n_actions, model.n_params))
    for j in range(model.n_firms):
        out[j] = np.einsum("xcd,ca->xad", W[j][:, :, None] * model.basis[j], model.own_selector[j])
    return out


def expected_values(model: MixtureDDCModel, W, V) -> np.ndarray:
    """Continuation expectations ``F_j(.|x, a) V_j`` for every firm.

    ``V`` has shape ``(J, X)`` or ``(J, X, k)``; the result has shape
    ``(J, X, A)`` or ``(J, X, A, k)``.
    """
    V = np.asarray(V, dtype=np.float64)
    J, X = model.n_firms, model.n_states
    if V.shape[:2] != (J, X):
        raise DimensionError(f"values must have leading shape {(J, X)}, got {V.shape}")
    extra = V.shape[2:]
    k = int(np.prod(extra, dtype=np.int64))
    stacked = np.moveaxis(V.reshape(J, X, k), 0, -1).reshape(X, k * J)
    EV = model.transition.expect(stacked).reshape(X, model.n_profiles, k, J)
    if J == 1:
        return EV[:, :, :, 0].reshape((1, X, model.n_actions) + extra)
    out = np.empty((J, X, model.n_actions, k))
    for j in range(J):
        out[j] = np.einsum("xck,ca->xak", W[j][:, :, None] * EV[:, :, :, j], model.own_selector[j])
    return out.reshape((J, X, model.n_actions) + extra)


def policy_transition(model: MixtureDDCModel, P) -> LinearOperator:
    """The state transition ``F_P`` induced by all firms following ``P``."""
    Pj = joint_weights(model, P)
    kernel = model.transition

    def apply(V):
        EV = kernel.expect(V)
        if EV.ndim == 2:
            return np.einsum("xc,xc->x", Pj, EV)
        return np.einsum("xc,xck->xk", Pj, EV.reshape(EV.shape[0], EV.shape[1], -1)).reshape(V.shape)

    return LinearOperator(model.n_states, apply)


class ExpectedTransition:
    """Firm ``j``'s transition over its own action, rivals integrated out."""

    def __init__(self, model: MixtureDDCModel, firm: int, weights):
        self.model = model
        self.firm = firm
        self.weights = weights

    def apply(self, V) -> np.ndarray:
        V = np.asarray(V, dtype=np.float64)
        m = self.model
        EV = m.transition.expect(V)
        W = self.weights[:, :, None] if EV.ndim == 3 else self.weights
        if EV.ndim == 2:
            return (W * EV) @ m.own_selector[self.firm]
        return np.einsum("xck,ca->xak", W * EV, m.own_selector[self.firm])

    def dense(self) -> np.ndarray:
        """``(A, X, X)`` transition matrices."""
        F = self.model.transition.dense()
        return np.einsum("xc,ca,cxy->axy", self.weights, self.model.own_selector[self.firm], F)


def _type_ccp(P, m):
    P = np.asarray(P, dtype=np.float64)
    return P[m] if P.ndim == 4 else P


def rival_expectation(model: MixtureDDCModel, firm: int, m: int, P):
    """Expected features and transition of ``firm`` given rivals' CCPs of type ``m``."""
    Pm = _type_ccp(P, m)
    W = rival_weights(model, Pm)
    phibar = expected_basis(model, W)[firm]
    return phibar, ExpectedTransition(model, firm, W[firm])


def conditional_values(model: MixtureDDCModel, theta, V, firm: int, m: int, P) -> np.ndarray:
    """``v(x, a) = phibar(x, a) @ theta + beta * F(.|x, a) V``."""
    V = np.asarray(V, dtype=np.float64)
    if V.shape != (model.n_states,):
        raise DimensionError(f"value vector must have length {model.n_states}, got {V.shape}")
    phibar, F = rival_expectation(model, firm, m, P)
    return phibar @ np.asarray(theta, dtype=np.float64) + model.beta * F.apply(V)


@dataclass(frozen=True)
class Ar1Spec:
    """``y' = intercept + action_shift * a + persistence * y + sd * eta``."""

    intercept: float
    persistence: float
    sd: float
    n: int
    n_sigma: float = 3.0
    action_shift: float | None = None
    n_actions: int = 2

    def __post_init__(self):
        if not np.isfinite(self.persistence) or abs(self.persistence) >= 1.0:
            raise InputError(f"AR(1) persistence must satisfy |rho| < 1, got {self.persistence}")
        if not np.isfinite(self.sd) or self.sd <= 0.0:
            raise InputError(f"AR(1) innovation sd must be positive, got {self.sd}")
        if int(self.n) < 2:
            raise InputError(f"grid needs at least 2 points, got {self.n}")
        if self.n_sigma <= 0:
            raise InputError("span multiplier must be positive")


def tauchen_discretize(spec: Ar1Spec):
    """Tauchen discretization of an AR(1) process.

    Returns
    -------
    grid : ndarray, shape (n,)
        Equally spaced over the long-run mean(s) plus/minus ``n_sigma``
        long-run standard deviations.
    transitions : ndarray, shape (n_cond, n, n)
        One row-stochastic matrix per conditioning action (``n_cond = 1``
        without an action shift).
    """
    rho, sd, n = spec.persistence, spec.sd, int(spec.n)
    sd_lr = sd / np.sqrt(1.0 - rho**2)
    shifts = [0.0] if spec.action_shift is None else [spec.action_shift * a for a in range(spec.n_actions)]
    means = [(spec.intercept + s) / (1.0 - rho) for s in shifts]
    lo = min(means) - spec.n_sigma * sd_lr
    hi = max(means) + spec.n_sigma * sd_lr
    grid = np.linspace(lo, hi, n)
    step = grid[1] - grid[0]
    out = np.empty((len(shifts), n, n))
    for a, s in enumerate(shifts):
        cond = spec.intercept + s + rho * grid
        upper = ndtr((grid[None, :] + step / 2 - cond[:, None]) / sd)
        lower = ndtr((grid[None, :] - step / 2 - cond[:, None]) / sd)
        P = upper - lower
        P[:, 0] = upper[:, 0]
        P[:, -1] = 1.0 - lower[:, -1]
        out[a] = P
    return grid, out
