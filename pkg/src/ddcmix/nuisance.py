"""Nuisance blocks used inside the EM-NPL loop, one class per representation.

Separable blocks (policy valuation, EPL) expose the logit design implied by
their nuisance: ``Lambda(theta) = logit(Z theta + O)``.  Non-separable
blocks (Bellman, Euler) instead expose the pieces needed to run the truncated
inner solver together with its derivative in ``theta``, which the BFGS
M-step consumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SingularSystemError
from .fixed_point import (
    _euler_map,
    _euler_transport,
    _euler_tangent,
    deflated_policy_operator,
    epl_components_system,
    euler_setup,
    linear_problem,
    make_gamma,
    restore_constant,
    w_components_rhs,
)
from .linalg import (
    INF,
    LinearOperator,
    SolverReport,
    anderson_accelerate,
    gmres,
    is_infinite,
    resolve_cap,
)
from .model import (
    MixtureDDCModel,
    expected_basis,
    expected_values,
    logit_ccp,
    policy_transition,
    rival_weights,
    social_surplus,
)

REPRESENTATIONS = ("PV", "BM", "EE", "EPL")


@dataclass
class Context:
    """Per-type inputs that stay fixed during one outer iteration."""

    P: np.ndarray
    W: np.ndarray
    phibar: np.ndarray
    extra: dict


class PolicyValuationBlock:
    """W-components of the policy valuation equation for every firm."""

    separable = True
    linear_solver = True

    def __init__(
        self, model: MixtureDDCModel, algorithm: str = "GMRES", tol: float = 1e-8, memory: int = 5, deflate=None
    ):
        if not model.linear:
            raise ConfigError("policy valuation block needs utility linear in parameters")
        self.model, self.algorithm, self.tol, self.memory = model, algorithm, tol, memory
        # Krylov runs use the deflated operator; the iterate is then the
        # deflated solution, and the policy values are restored on read.
        self.deflate = algorithm == "GMRES" if deflate is None else bool(deflate)

    def prepare(self, P, theta_prev=None, v_prev=None) -> Context:
        m = self.model
        W = rival_weights(m, P)
        phibar = expected_basis(m, W)
        B = w_components_rhs(m, P, W, phibar)
        if self.deflate:
            A = deflated_policy_operator(m, P)
        else:
            A = policy_transition(m, P).identity_minus(m.beta)
        return Context(P, W, phibar, {"A": A, "B": B})

    def initial(self, ctx: Context):
        return np.zeros_like(ctx.extra["B"])

    def solve(self, ctx: Context, Y0, q):
        prob = linear_problem(ctx.extra["A"], ctx.extra["B"], "w_components")
        return make_gamma(prob, self.algorithm, q, self.tol, self.memory)(Y0)

    def _blocks(self, Y):
        m = self.model
        if self.deflate:
            Y = restore_constant(Y, m.beta)
        return Y.reshape(m.n_states, m.n_firms, m.n_params + 1).transpose(1, 0, 2)  # (J, X, d+1)

    def design(self, ctx: Context, Y):
        m = self.model
        ev = expected_values(m, ctx.W, self._blocks(Y))  # (J, X, A, d+1)
        Z = ctx.phibar + m.beta * ev[..., :-1]
        O = m.beta * ev[..., -1]
        return Z, O

    def value(self, ctx: Context, theta, Y):
        Wb = self._blocks(Y)
        return Wb[..., :-1] @ theta + Wb[..., -1]


class EPLBlock:
    """Stacked EPL systems ``(I - dPhi) Y = [Z, v - Lambda0]``.

    The conditional values after the M-step are ``v - Y_0 + Y_Z theta``.
    """

    separable = True
    linear_solver = True

    def __init__(self, model: MixtureDDCModel, algorithm: str = "GMRES", tol: float = 1e-8, memory: int = 5):
        if not model.linear:
            raise ConfigError("EPL block needs utility linear in parameters")
        self.model, self.algorithm, self.tol, self.memory = model, algorithm, tol, memory

    def prepare(self, P, theta_prev=None, v_prev=None) -> Context:
        if theta_prev is None or v_prev is None:
            raise ConfigError("EPL needs the previous parameter and conditional values")
        A, B, pt = epl_components_system(self.model, theta_prev, v_prev)
        return Context(pt.P, pt.W, pt.phibar, {"A": A, "B": B, "v": pt.v})

    def initial(self, ctx: Context):
        return np.zeros_like(ctx.extra["B"])

    def solve(self, ctx: Context, Y0, q):
        prob = linear_problem(ctx.extra["A"], ctx.extra["B"], "cond_values")
        return make_gamma(prob, self.algorithm, q, self.tol, self.memory)(Y0)

    def design(self, ctx: Context, Y):
        m = self.model
        shape = (m.n_firms, m.n_states, m.n_actions)
        Z = Y[:, :-1].reshape(shape + (m.n_params,))
        O = ctx.extra["v"] - Y[:, -1].reshape(shape)
        return Z, O

    def value(self, ctx: Context, theta, Y):
        Z, O = self.design(ctx, Y)
        return Z @ theta + O


class _NonSeparable:
    separable = False
    linear_solver = False

    def __init__(self, model: MixtureDDCModel, algorithm: str = "SA", tol: float = 1e-8, memory: int = 5):
        if algorithm not in ("SA", "Newton", "Anderson"):
            raise ConfigError(f"{type(self).__name__} supports SA, Newton or Anderson, not {algorithm}")
        self.model, self.algorithm, self.tol, self.memory = model, algorithm, tol, memory

    # subclasses define: cvals, g_from_c, g_theta, bilinear, bilinear_dp, dcvals, logits, dlogits

    def _jacobian_op(self, ctx, P, shape):
        n = int(np.prod(shape))

        def apply(x):
            if x.ndim == 1:
                return x - self.bilinear(ctx, P, x.reshape(shape)[..., None])[..., 0].ravel()
            k = x.shape[1]
            return x - self.bilinear(ctx, P, x.reshape(shape + (k,))).reshape(n, k)

        return LinearOperator(n, apply)

    def mapping(self, ctx, theta):
        return lambda Y: self.g_from_c(ctx, theta, self.cvals(ctx, theta, Y))

    def solve(self, ctx, theta, Y0, q, tangent: bool = True):
        """Run the truncated inner solver; returns ``(Y, dY/dtheta or None, report)``."""
        if self.algorithm == "SA":
            return self._sa(ctx, theta, Y0, q, tangent)
        if self.algorithm == "Newton":
            return self._newton(ctx, theta, Y0, q, tangent)
        return self._anderson(ctx, theta, Y0, q, tangent)

    def _implicit_tangent(self, ctx, P, shape):
        """``dY*/dtheta = (I - dG/dY)^{-1} dG/dtheta`` at a converged point."""
        d = self.model.n_params
        rhs = self.g_theta(ctx, P)
        rhs = np.broadcast_to(rhs, shape + (d,)).reshape(-1, d)
        sol, _ = gmres(self._jacobian_op(ctx, P, shape), rhs, None, INF, 1e-11 * max(np.linalg.norm(rhs), 1e-300))
        return sol.reshape(shape + (d,))

    def _sa(self, ctx, theta, Y0, q, tangent):
        # A finite q runs exactly q steps so the map and its tangent are smooth
        # in theta; q = inf stops on tolerance and differentiates the fixed point.
        d = self.model.n_params
        Y = np.array(Y0, dtype=np.float64)
        T = np.zeros(Y.shape + (d,)) if tangent else None
        infinite = is_infinite(q)
        cap = resolve_cap(q, Y.size)
        hist, it, diff = [], 0, np.inf
        while it < cap:
            c = self.cvals(ctx, theta, Y)
            G = self.g_from_c(ctx, theta, c)
            if tangent and not infinite:
                P = logit_ccp(c, 0.0)
                T = self.g_theta(ctx, P) + self.bilinear(ctx, P, T)
            diff = float(np.max(np.abs(G - Y)))
            Y = G
            it += 1
            hist.append(diff)
            if not np.isfinite(diff) or (infinite and diff <= self.tol):
                break
        if tangent and infinite and np.isfinite(diff):
            T = self._implicit_tangent(ctx, logit_ccp(self.cvals(ctx, theta, Y), 0.0), Y.shape)
        return Y, T, SolverReport(it, diff, diff <= self.tol, 0.0, hist)

    def _newton(self, ctx, theta, Y0, q, tangent):
        d = self.model.n_params
        Y = np.array(Y0, dtype=np.float64)
        shape = Y.shape
        T = np.zeros(shape + (d,)) if tangent else None
        cap = resolve_cap(q, Y.size)
        hist, steps = [], 0
        while True:
            c = self.cvals(ctx, theta, Y)
            D = Y - self.g_from_c(ctx, theta, c)
            rn = float(np.max(np.abs(D)))
            hist.append(rn)
            if rn <= self.tol or steps >= cap or not np.isfinite(rn):
                break
            P = logit_ccp(c, 0.0)
            op = self._jacobian_op(ctx, P, shape)
            s, rep = gmres(op, D.ravel(), None, INF, 1e-11 * max(np.linalg.norm(D), 1e-300))
            if not rep.converged and rep.final_residual_norm > 0.5 * np.linalg.norm(D):
                raise SingularSystemError(f"Newton step {steps + 1}: I - dG is singular or unsolved")
            s = s.reshape(shape)
            if tangent:
                dc = self.dcvals(ctx, T)
                dP = P[..., None] * (dc - np.einsum("...a,...ak->...k", P, dc)[..., None, :])
                rhs = self.g_theta(ctx, P) - self.bilinear_dp(ctx, dP, s)
                sol, _ = gmres(op, rhs.reshape(-1, d), None, INF, 1e-11 * max(np.linalg.norm(rhs), 1e-300))
                T = sol.reshape(shape + (d,))
            Y = Y - s
            steps += 1
        if tangent and rn <= self.tol:
            # one more Newton step would be ~zero; its tangent is the implicit one
            T = self._implicit_tangent(ctx, logit_ccp(c, 0.0), shape)
        return Y, T, SolverReport(steps, rn, rn <= self.tol, 0.0, hist)

    def _anderson(self, ctx, theta, Y0, q, tangent):
        Y, rep = anderson_accelerate(self.mapping(ctx, theta), Y0, q, self.memory, self.tol)
        T = None
        if tangent:
            d = self.model.n_params
            T = np.empty(Y.shape + (d,))
            for i in range(d):
                h = 1e-6 * max(1.0, abs(theta[i]))
                e = np.zeros(d)
                e[i] = h
                yp, _ = anderson_accelerate(self.mapping(ctx, theta + e), Y0, q, self.memory, self.tol)
                ym, _ = anderson_accelerate(self.mapping(ctx, theta - e), Y0, q, self.memory, self.tol)
                T[..., i] = (yp - ym) / (2 * h)
        return Y, T, rep


class BellmanBlock(_NonSeparable):
    """Integrated values ``V[j, x]`` under the smoothed Bellman operator."""

    def prepare(self, P, theta_prev=None, v_prev=None) -> Context:
        W = rival_weights(self.model, P)
        return Context(P, W, expected_basis(self.model, W), {})

    def initial(self, ctx):
        return np.zeros((self.model.n_firms, self.model.n_states))

    def _ev(self, ctx, V):
        return expected_values(self.model, ctx.W, V)

    def cvals(self, ctx, theta, Y):
        return ctx.phibar @ theta + self.model.beta * self._ev(ctx, Y)

    def g_from_c(self, ctx, theta, c):
        return social_surplus(c) + self.model.value_shift

    def g_theta(self, ctx, P):
        return np.einsum("jxa,jxad->jxd", P, ctx.phibar)

    def bilinear(self, ctx, P, s):
        return self.model.beta * np.einsum("jxa,jxak->jxk", P, self._ev(ctx, s))

    def bilinear_dp(self, ctx, dP, s):
        return self.model.beta * np.einsum("jxak,jxa->jxk", dP, self._ev(ctx, s))

    def dcvals(self, ctx, T):
        return ctx.phibar + self.model.beta * self._ev(ctx, T)

    logits = cvals
    dlogits = dcvals

    def value(self, ctx, theta, Y):
        return Y


class EulerBlock(_NonSeparable):
    """Conditional-value differences ``v(x, a) - v(x, 0)`` (single agent)."""

    def __init__(self, model, algorithm="SA", tol=1e-8, memory=5):
        super().__init__(model, algorithm, tol, memory)
        self.setup = euler_setup(model)

    def prepare(self, P, theta_prev=None, v_prev=None) -> Context:
        return Context(P, None, None, {})

    def initial(self, ctx):
        return np.zeros((self.model.n_states, self.model.n_actions))

    def cvals(self, ctx, theta, Y):
        return Y

    def g_from_c(self, ctx, theta, c):
        return _euler_map(self.model, self.setup, theta, c)

    def g_theta(self, ctx, P):
        return self.setup.basis_diff

    def bilinear(self, ctx, P, s):
        return _euler_tangent(self.model, self.setup, P, s)

    def bilinear_dp(self, ctx, dP, s):
        return _euler_transport(self.model, self.setup, np.einsum("xak,xa->xk", dP, s))

    def dcvals(self, ctx, T):
        return T

    def logits(self, ctx, theta, Y):
        return Y[None]

    def dlogits(self, ctx, T):
        return T[None]

    def value(self, ctx, theta, Y):
        return Y


def make_block(model: MixtureDDCModel, representation: str, algorithm: str, tol: float = 1e-8, memory: int = 5):
    if representation == "PV":
        if algorithm not in ("GMRES", "SA", "Newton", "Anderson"):
            raise ConfigError(f"unknown algorithm {algorithm!r}")
        return PolicyValuationBlock(model, algorithm, tol, memory)
    if representation == "EPL":
        return EPLBlock(model, algorithm, tol, memory)
    if representation == "BM":
        return BellmanBlock(model, algorithm, tol, memory)
    if representation == "EE":
        return EulerBlock(model, algorithm, tol, memory)
    raise ConfigError(f"unknown representation {representation!r}; choose from {REPRESENTATIONS}")
