"""EM-NPL(q): sequential pseudo-likelihood estimation with latent types.

Each outer iteration runs an E-step on the current CCPs, a truncated
nuisance update with ``q`` inner iterations, a per-type M-step, and a CCP
update.  Representations with a theta-free nuisance (policy valuation and
EPL) update the nuisance once before a closed-form-style logit M-step;
Bellman and Euler representations rerun the truncated solver inside a BFGS
M-step that differentiates through it.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, sparse
from scipy.optimize import linear_sum_assignment
from scipy.special import log_softmax, logsumexp

from .errors import ConfigError, DDCError, EstimationError, InputError, SingularSystemError
from .linalg import INF, bb_step_size, is_infinite
from .model import CCP_FLOOR, MixtureDDCModel, floor_ccp, logit_ccp, social_surplus
from .nuisance import make_block
from .panel import PanelData

log = logging.getLogger(__name__)

STALL_GRADIENT = 1e-6

METHODS = {
    "PV_GMRES": ("PV", "GMRES"),
    "PV_SA": ("PV", "SA"),
    "BM_SA": ("BM", "SA"),
    "BM_AD": ("BM", "Anderson"),
    "BM_NT": ("BM", "Newton"),
    "EE_SA": ("EE", "SA"),
    "EPL_GMRES": ("EPL", "GMRES"),
    "PV_EPL_GMRES": ("EPL", "GMRES"),
}


@dataclass(frozen=True)
class InnerConfig:
    """Nuisance representation, inner algorithm and truncation level."""

    representation: str = "PV"
    algorithm: str = "GMRES"
    q: float = 4
    tol: float = 1e-8
    memory: int = 5

    @classmethod
    def from_method(cls, method: str, q=4, tol: float = 1e-8) -> "InnerConfig":
        if method not in METHODS:
            raise ConfigError(f"unknown method {method!r}; choose from {sorted(METHODS)}")
        rep, alg = METHODS[method]
        return cls(rep, alg, q, tol)

    def __post_init__(self):
        q = self.q
        if not (is_infinite(q) or (float(q) == int(q) and int(q) >= 1)):
            raise ConfigError(f"q must be a positive integer or infinity, got {q!r}")


@dataclass
class EstimationState:
    """Starting point (or snapshot) of the outer loop.

    ``Y`` and ``v`` may be left empty; the loop then builds them from
    ``P`` with a full inner solve.
    """

    P: np.ndarray  # (M, J, X, A)
    pi: np.ndarray
    theta: np.ndarray | None = None  # (M, d)
    Y: list | None = None
    v: np.ndarray | None = None  # (M, J, X, A) conditional values, for EPL


@dataclass
class EstimationResult:
    theta: np.ndarray
    pi: np.ndarray
    P: np.ndarray
    loglik: float
    converged: bool
    n_outer: int
    wall_time: float
    method: str
    q: float
    trace: list = field(default_factory=list)
    Y: list | None = None
    v: np.ndarray | None = None
    responsibilities: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)
    message: str = ""

    def summary(self) -> dict:
        return {
            "method": self.method,
            "q": "inf" if is_infinite(self.q) else int(self.q),
            "theta": self.theta.tolist(),
            "pi": self.pi.tolist(),
            "loglik": self.loglik,
            "converged": bool(self.converged),
            "n_outer": int(self.n_outer),
            "wall_time": self.wall_time,
            "message": self.message,
        }


# ------------------------------------------------------------------ E-step


def type_log_likelihoods(counts: sparse.spmatrix, logP) -> np.ndarray:
    """``(N, M)`` log-likelihood of every market under each type's CCPs."""
    logP = np.asarray(logP, dtype=np.float64)
    return np.asarray(counts @ logP.reshape(logP.shape[0], -1).T)


def posterior_weights(ll, pi):
    """Posterior type probabilities ``(N, M)`` and the total log-likelihood."""
    joint = ll + np.log(np.asarray(pi, dtype=np.float64))[None, :]
    norm = logsumexp(joint, axis=1)
    return np.exp(joint - norm[:, None]), float(norm.sum())


def e_step(counts, P, pi):
    """Responsibilities, updated weights and log-likelihood at CCPs ``P``."""
    logP = np.log(floor_ccp(P))
    resp, ll = posterior_weights(type_log_likelihoods(counts, logP), pi)
    # keep every weight representable as positive even when posteriors underflow
    pi_new = np.maximum(resp.mean(axis=0), np.finfo(np.float64).tiny)
    return resp, pi_new / pi_new.sum(), ll


def weighted_counts(counts, resp, shape) -> np.ndarray:
    """Expected counts per type, ``(M, J, X, A)``."""
    return np.asarray(counts.T @ resp).T.reshape((resp.shape[1],) + tuple(shape))


# ------------------------------------------------------------------ M-steps


def logit_objective(theta, Z, O, wc, scale):
    """Negative weighted log-likelihood of ``logit(Z theta + O)`` and its gradient."""
    v = Z @ theta + O
    logP = v - social_surplus(v)[..., None]
    P = np.exp(logP)
    n = wc.sum(axis=-1, keepdims=True)
    f = -float(np.sum(wc * logP)) / scale
    r = wc - n * P
    g = -np.tensordot(r, Z, axes=(list(range(r.ndim)), list(range(r.ndim)))) / scale
    return f, g, P


def logit_m_step(Z, O, wc, theta0, scale: float, tol: float = 1e-8, max_iter: int = 50):
    """Damped Newton for ``max sum wc * log logit(Z theta + O)``.

    Only cells with positive weight enter.  Returns ``(theta, gradient)``.
    """
    d = Z.shape[-1]
    A = Z.shape[-2]
    # differencing against action 0 leaves the logit unchanged and removes the
    # large common level that continuation values carry when beta is near 1
    Z = Z - Z[..., :1, :]
    O = O - O[..., :1]
    Zf, Of, wf = Z.reshape(-1, A, d), O.reshape(-1, A), wc.reshape(-1, A)
    keep = wf.sum(axis=1) > 0
    Zf, Of, wf = Zf[keep], Of[keep], wf[keep]
    n = wf.sum(axis=1)
    theta = np.array(theta0, dtype=np.float64)
    f, g, P = logit_objective(theta, Zf, Of, wf, scale)
    for _ in range(max_iter):
        if np.max(np.abs(g)) <= tol:
            break
        zbar = np.einsum("ia,iad->id", P, Zf)
        dev = Zf - zbar[:, None, :]
        H = np.einsum("i,ia,iad,iae->de", n, P, dev, dev) / scale
        try:
            step = np.linalg.solve(H + 1e-12 * np.eye(d), g)
            np.linalg.cholesky(H)
        except np.linalg.LinAlgError:
            ridge = 1e-6 * max(1.0, float(np.max(np.abs(np.diag(H)))))
            step = np.linalg.solve(H + ridge * np.eye(d), g)
        t = 1.0
        while True:
            cand = theta - t * step
            fc, gc, Pc = logit_objective(cand, Zf, Of, wf, scale)
            if fc <= f + 1e-4 * t * float(g @ -step) or t < 1e-10:
                break
            t *= 0.5
        if t < 1e-10:
            gnorm = float(np.max(np.abs(g)))
            # a stall at rounding level is a converged M-step; anything larger is a failure
            if gnorm > STALL_GRADIENT:
                raise EstimationError(
                    f"M-step line search failed with gradient sup-norm {gnorm:.3e}", gradient_norm=gnorm
                )
            break
        theta, f, g, P = cand, fc, gc, Pc
    return theta, g


class _NonSeparableObjective:
    """Pseudo-likelihood of one type as a function of theta, through ``Gamma^q``."""

    def __init__(self, block, ctx, Y_prev, q, wc, scale):
        self.block, self.ctx, self.Y_prev, self.q = block, ctx, Y_prev, q
        self.wc, self.scale = wc, scale
        self.n = wc.sum(axis=-1, keepdims=True)
        self.cache_key = None
        self.cache = None
        self.inner_iters = 0

    def __call__(self, theta):
        Y, T, rep = self.block.solve(self.ctx, theta, self.Y_prev, self.q, tangent=True)
        self.inner_iters += rep.iterations_used
        v = self.block.logits(self.ctx, theta, Y)
        dv = self.block.dlogits(self.ctx, T)
        logP = v - social_surplus(v)[..., None]
        if not np.all(np.isfinite(logP)):
            return np.inf, np.zeros_like(theta)
        P = np.exp(logP)
        f = -float(np.sum(self.wc * logP)) / self.scale
        g = -np.einsum("jxa,jxad->d", self.wc - self.n * P, dv) / self.scale
        self.cache_key, self.cache = theta.tobytes(), (Y, rep)
        return f, g


def bfgs_m_step(objective: _NonSeparableObjective, theta0, gtol: float = 1e-6, max_iter: int = 200):
    res = optimize.minimize(
        objective, np.asarray(theta0, dtype=np.float64), jac=True, method="BFGS",
        options={"gtol": gtol, "maxiter": max_iter},
    )
    return res.x, res.jac


# ------------------------------------------------------------------ outer loop


def _blocks_per_type(model, inner):
    return make_block(model, inner.representation, inner.algorithm, inner.tol, inner.memory)


def pv_one_step(model: MixtureDDCModel, counts, resp, P, theta0=None, scale=None):
    """Parameters from one fully solved policy-valuation step at CCPs ``P``."""
    block = make_block(model, "PV", "GMRES", 1e-10)
    M = P.shape[0]
    wc = weighted_counts(counts, resp, P.shape[1:])
    scale = scale or float(resp.shape[0])
    thetas, vs = [], []
    for m in range(M):
        ctx = block.prepare(P[m])
        Y, _ = block.solve(ctx, block.initial(ctx), INF)
        Z, O = block.design(ctx, Y)
        th0 = np.zeros(model.n_params) if theta0 is None else theta0[m]
        th, _ = logit_m_step(Z, O, wc[m], th0, scale)
        thetas.append(th)
        vs.append(Z @ th + O)
    return np.array(thetas), np.array(vs)


def _ccp_update(rule, P_prev, lam, hist):
    """Plain or spectral (Barzilai-Borwein) CCP update."""
    if rule == "plain":
        return lam, 1.0
    phi = P_prev - lam
    norm = float(np.linalg.norm(phi))
    if hist.get("P") is None:
        alpha = bb_step_size(None, None, 0, norm)
    else:
        alpha = bb_step_size(P_prev - hist["P"], phi - hist["phi"], 1, norm)
    hist["P"], hist["phi"] = P_prev, phi
    newP = np.clip(P_prev - alpha * phi, CCP_FLOOR, 1.0)
    return floor_ccp(newP), alpha


def em_npl_q_run(
    model: MixtureDDCModel,
    data: PanelData,
    init: EstimationState,
    inner: InnerConfig,
    eps_outer: float = 1e-3,
    max_outer: int = 100,
    ccp_update: str = "plain",
    method_name: str | None = None,
) -> EstimationResult:
    """Run EM-NPL(q) from ``init`` until the outer stopping rule or the cap.

    The stopping rule is the max of sup-norm changes in CCPs, parameters,
    mixing weights and the nuisance value (relative to ``1 + ||V||``).
    """
    start = time.perf_counter()
    if ccp_update not in ("plain", "spectral"):
        raise ConfigError(f"ccp_update must be 'plain' or 'spectral', got {ccp_update!r}")
    J, X, A, d = model.n_firms, model.n_states, model.n_actions, model.n_params
    counts = data.market_counts(X, A)
    if data.n_firms != J:
        raise InputError(f"panel has {data.n_firms} firms; model has {J} (field: firm)")
    P = floor_ccp(np.array(init.P, dtype=np.float64).reshape(-1, J, X, A))
    M = P.shape[0]
    pi = np.asarray(init.pi, dtype=np.float64)
    if pi.shape != (M,):
        raise InputError(f"initial weights have length {pi.size}; CCPs carry {M} types")
    N = data.n_markets
    block = _blocks_per_type(model, inner)
    is_epl = inner.representation == "EPL"
    if is_epl and ccp_update == "spectral":
        ccp_update = "plain"
    name = method_name or f"{inner.representation}_{inner.algorithm}"

    theta = None if init.theta is None else np.array(init.theta, dtype=np.float64).reshape(M, d)
    v = None if init.v is None else np.array(init.v, dtype=np.float64)
    if (not block.separable or is_epl) and (theta is None or (is_epl and v is None)):
        resp0, _, _ = e_step(counts, P, pi)
        th0, v0 = pv_one_step(model, counts, resp0, P, theta, float(N))
        theta = th0 if theta is None else theta
        v = v0 if v is None else v
    if theta is None:
        theta = np.zeros((M, d))

    Y = list(init.Y) if init.Y is not None else [None] * M
    if not block.separable:
        for m in range(M):
            if Y[m] is None:
                ctx = block.prepare(P[m])
                Y[m], _, _ = block.solve(ctx, theta[m], block.initial(ctx), INF, tangent=False)

    values = [None] * M
    trace = []
    hist: dict = {}
    converged = False
    message = ""
    k = 0
    try:
        while k < max_outer:
            k += 1
            resp, pi_new, ll = e_step(counts, P, pi)
            wc = weighted_counts(counts, resp, (J, X, A))
            theta_new = np.empty_like(theta)
            lam = np.empty_like(P)
            v_new = np.empty((M, J, X, A)) if is_epl else None
            inner_iters = 0
            dV = 0.0
            grads = []
            for m in range(M):
                ctx = block.prepare(P[m], theta[m], None if v is None else v[m])
                if block.separable:
                    if Y[m] is None:
                        Ym, rep = block.solve(ctx, block.initial(ctx), INF)
                    else:
                        Ym, rep = block.solve(ctx, Y[m], inner.q)
                    inner_iters += rep.iterations_used
                    Z, O = block.design(ctx, Ym)
                    th, g = logit_m_step(Z, O, wc[m], theta[m], float(N))
                    vm = Z @ th + O
                    lam[m] = logit_ccp(vm)
                    if is_epl:
                        v_new[m] = vm
                    val = block.value(ctx, th, Ym)
                else:
                    obj = _NonSeparableObjective(block, ctx, Y[m], inner.q, wc[m], float(N))
                    th, g = bfgs_m_step(obj, theta[m])
                    if obj.cache_key == th.tobytes():
                        Ym, rep = obj.cache
                    else:
                        Ym, _, rep = block.solve(ctx, th, Y[m], inner.q, tangent=False)
                    inner_iters += obj.inner_iters
                    lam[m] = logit_ccp(block.logits(ctx, th, Ym))
                    val = Ym
                if not np.all(np.isfinite(val)) or not np.all(np.isfinite(th)):
                    raise EstimationError(f"outer iteration {k}: non-finite iterate for type {m}", float("nan"))
                if values[m] is not None:
                    dV = max(dV, float(np.max(np.abs(val - values[m]))) / (1.0 + float(np.max(np.abs(values[m])))))
                else:
                    dV = np.inf
                values[m] = val
                Y[m] = Ym
                theta_new[m] = th
                grads.append(float(np.max(np.abs(g))))
            P_new, alpha = _ccp_update(ccp_update, P, lam, hist)
            dP = float(np.max(np.abs(P_new - P)))
            dth = float(np.max(np.abs(theta_new - theta)))
            dpi = float(np.max(np.abs(pi_new - pi)))
            crit = max(dP, dth, dV, dpi)
            trace.append(
                {"iter": k, "dP": dP, "dtheta": dth, "dV": dV, "dpi": dpi, "loglik": ll,
                 "inner_iters": int(inner_iters), "step": alpha, "mstep_grad": max(grads)}
            )
            log.debug("outer %d: crit %.3e loglik %.6f", k, crit, ll)
            P, theta, pi = P_new, theta_new, pi_new
            if is_epl:
                v = v_new
            if crit < eps_outer:
                converged = True
                break
        if not converged:
            message = f"outer cap {max_outer} reached"
    except (DDCError, np.linalg.LinAlgError, FloatingPointError) as exc:
        message = f"failed at outer iteration {k}: {exc}"
        log.warning(message)
    resp, _, ll_final = e_step(counts, P, pi)
    wall = time.perf_counter() - start
    return EstimationResult(
        theta=theta, pi=pi, P=P, loglik=ll_final, converged=converged, n_outer=k, wall_time=wall,
        method=name, q=inner.q, trace=trace, Y=Y, v=v, responsibilities=resp, message=message,
    )


def pv_epl_run(model, data, init, q=4, eps_outer=1e-3, max_outer=100, tol=1e-8, ccp_update="plain"):
    """NPL(inf) with policy valuation to convergence, then EPL(q) from its end point."""
    start = time.perf_counter()
    first = em_npl_q_run(model, data, init, InnerConfig("PV", "GMRES", INF, tol), eps_outer, max_outer,
                         ccp_update, "PV_GMRES")
    resp = first.responsibilities
    counts = data.market_counts(model.n_states, model.n_actions)
    _, v = pv_one_step(model, counts, resp, first.P, first.theta, float(data.n_markets))
    state = EstimationState(first.P, first.pi, first.theta, None, v)
    second = em_npl_q_run(model, data, state, InnerConfig("EPL", "GMRES", q, tol), eps_outer,
                          max(1, max_outer - first.n_outer), "plain", "PV_EPL_GMRES")
    second.n_outer += first.n_outer
    second.trace = first.trace + second.trace
    second.converged = first.converged and second.converged
    second.wall_time = time.perf_counter() - start
    return second


def run_method(model, data, init, method, q=4, eps_outer=1e-3, max_outer=100, tol=1e-8, ccp_update="plain"):
    """Dispatch a named method (``PV_GMRES``, ``BM_NT``, ...)."""
    if method == "PV_EPL_GMRES":
        return pv_epl_run(model, data, init, q, eps_outer, max_outer, tol, ccp_update)
    return em_npl_q_run(model, data, init, InnerConfig.from_method(method, q, tol), eps_outer, max_outer,
                        ccp_update, method)


def multi_start(model, data, inits, method, q=4, **kwargs) -> EstimationResult:
    """Run from several starts and keep the highest log-likelihood.

    Non-converged runs only win when no start converged; a start that
    raises is recorded and skipped.
    """
    if not inits:
        raise ConfigError("multi_start needs at least one initial state")
    results, failures = [], []
    for k, s in enumerate(inits):
        try:
            results.append(run_method(model, data, s, method, q, **kwargs))
        except DDCError as exc:
            failures.append(f"start {k}: {exc}")
    if not results:
        raise EstimationError("every start failed:\n  " + "\n  ".join(failures))
    best = max(results, key=lambda r: (r.converged, r.loglik))
    best.diagnostics["starts"] = [(r.loglik, r.converged) for r in results]
    best.diagnostics["failed_starts"] = failures
    return best


# ------------------------------------------------------------------ post-estimation


def match_labels(theta_hat, pi_hat, theta_true, pi_true):
    """Best relabeling of the estimated types; returns ``(perm, mse)``.

    ``theta_hat[perm[m]]`` estimates ``theta_true[m]`` and ``mse`` is
    ``sum_m |theta_hat_perm(m) - theta*_m|^2 + |pi_hat_perm - pi*|^2``.  The
    objective is a sum over matched pairs, so the assignment solver returns
    the same minimum as enumerating all permutations.
    """
    th = np.atleast_2d(np.asarray(theta_hat, dtype=np.float64))
    tt = np.atleast_2d(np.asarray(theta_true, dtype=np.float64))
    ph = np.atleast_1d(np.asarray(pi_hat, dtype=np.float64))
    pt = np.atleast_1d(np.asarray(pi_true, dtype=np.float64))
    if th.shape != tt.shape or ph.shape != pt.shape or ph.size != th.shape[0]:
        raise InputError(f"shape mismatch: theta {th.shape} vs {tt.shape}, pi {ph.shape} vs {pt.shape}")
    cost = ((tt[:, None, :] - th[None, :, :]) ** 2).sum(axis=2) + (pt[:, None] - ph[None, :]) ** 2
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(tt.shape[0], dtype=np.int64)
    perm[rows] = cols
    return perm, float(cost[rows, cols].sum())


def parameter_mse(theta_hat, pi_hat, theta_true, pi_true) -> float:
    """Squared error of one replication after label matching."""
    return match_labels(theta_hat, pi_hat, theta_true, pi_true)[1]


def _linear_design(model, P):
    block = make_block(model, "PV", "GMRES", 1e-12)
    out = []
    for m in range(P.shape[0]):
        ctx = block.prepare(P[m])
        Y, _ = block.solve(ctx, block.initial(ctx), INF)
        out.append(block.design(ctx, Y))
    return out


def mixture_scores(model, data, theta, pi, P, designs=None):
    """Per-market scores ``(N, p)`` for ``(theta_1..theta_M, pi_1..pi_{M-1})``."""
    J, X, A, d = model.n_firms, model.n_states, model.n_actions, model.n_params
    counts = data.market_counts(X, A)
    designs = designs or _linear_design(model, P)
    M = len(designs)
    ll = np.empty((data.n_markets, M))
    g = np.empty((data.n_markets, M, d))
    for m, (Z, O) in enumerate(designs):
        u = Z @ theta[m] + O
        Pm = logit_ccp(u, 0.0)
        ll[:, m] = np.asarray(counts @ log_softmax(u, axis=-1).ravel())
        dev = Z - np.einsum("jxa,jxad->jxd", Pm, Z)[:, :, None, :]
        g[:, m] = np.asarray(counts @ dev.reshape(-1, d))
    resp, _ = posterior_weights(ll, pi)
    U = np.zeros((data.n_markets, M, M * d + M - 1))
    for m in range(M):
        U[:, m, m * d : (m + 1) * d] = g[:, m]
        if m < M - 1:
            U[:, m, M * d + m] = 1.0 / pi[m]
        else:
            U[:, m, M * d :] = -1.0 / pi[M - 1]
    return np.einsum("im,imp->ip", resp, U), resp, U, designs


def standard_errors_linear(model, data, theta, pi, P):
    """Analytic standard errors from the observed mixture information.

    Utilities are linear in parameters and the CCPs ``P`` are held at the
    estimator's fixed point.  Returns ``(se_theta (M, d), se_pi (M,), cov)``.
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
    pi = np.asarray(pi, dtype=np.float64)
    J, X, A, d = model.n_firms, model.n_states, model.n_actions, model.n_params
    M = theta.shape[0]
    counts = data.market_counts(X, A)
    score, resp, U, designs = mixture_scores(model, data, theta, pi, P)
    p = M * d + M - 1
    info = np.zeros((p, p))
    cell = np.asarray(counts.T @ resp).T.reshape(M, J, X, A).sum(axis=-1)  # weighted visits
    for m, (Z, O) in enumerate(designs):
        Pm = logit_ccp(Z @ theta[m] + O, 0.0)
        dev = Z - np.einsum("jxa,jxad->jxd", Pm, Z)[:, :, None, :]
        info[m * d : (m + 1) * d, m * d : (m + 1) * d] += np.einsum("jx,jxa,jxad,jxae->de", cell[m], Pm, dev, dev)
    Mw = resp.sum(axis=0)
    for m in range(M - 1):
        info[M * d + m, M * d + m] += Mw[m] / pi[m] ** 2
    info[M * d :, M * d :] += Mw[M - 1] / pi[M - 1] ** 2
    info -= np.einsum("im,imp,imq->pq", resp, U, U)
    info += score.T @ score
    info = 0.5 * (info + info.T)
    if not np.all(np.isfinite(info)):
        raise SingularSystemError("information matrix is not finite; try fewer types")
    eig = np.linalg.eigvalsh(info)
    scale = float(np.max(np.abs(eig)))
    if float(np.min(np.abs(eig))) <= 1e-14 * scale:
        raise SingularSystemError(
            "information matrix is singular or nearly so; the types may not be separately "
            "identified, so try fewer types"
        )
    if eig[0] <= 0:
        raise EstimationError(
            f"information matrix is not positive definite (smallest eigenvalue {eig[0]:.3e}); "
            "the parameters are not at a local maximum of the likelihood"
        )
    cov = np.linalg.inv(info)
    cov = 0.5 * (cov + cov.T)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    se_theta = se[: M * d].reshape(M, d)
    ones = np.ones(M - 1)
    var_last = float(ones @ cov[M * d :, M * d :] @ ones) if M > 1 else 0.0
    se_pi = np.concatenate([se[M * d :], [np.sqrt(max(var_last, 0.0))]])
    return se_theta, se_pi, cov


def bootstrap(data: PanelData, estimate, n_boot: int, seed: int = 0):
    """Market-level nonparametric bootstrap; ``estimate(panel)`` returns a flat vector."""
    rng = np.random.default_rng(seed)
    draws = []
    for _ in range(n_boot):
        idx = rng.integers(0, data.n_markets, data.n_markets)
        draws.append(np.asarray(estimate(data.subset(idx)), dtype=np.float64))
    draws = np.array(draws)
    return draws.std(axis=0, ddof=1), draws
