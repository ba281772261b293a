"""Simulation designs: firm entry/exit with latent types and a dynamic entry game.

Also holds the data-side initializers (frequency CCPs and sieve-logit starts
refined by a reduced-form EM) that every estimator run begins from.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError, EstimationError, InputError
from .fixed_point import bellman_problem, epl_operator, epl_phi, epl_point
from .kernels import counter_uniforms, draw_categorical
from .linalg import INF, bb_step_size, gmres, newton_kantorovich
from .model import (
    CCP_FLOOR,
    Ar1Spec,
    MixtureDDCModel,
    action_profiles,
    ccp_entropy,
    expected_basis,
    expected_values,
    floor_ccp,
    logit_ccp,
    policy_transition,
    rival_weights,
    social_surplus,
    tauchen_discretize,
)
from .panel import PanelData
from .transition import LaggedActionTransition

ENTRY_EXIT_PARAMS = ("vp0", "vp1", "vp2", "fc0", "fc1", "ec0", "ec1")
ENTRY_EXIT_TYPES = (
    (1.5, 1.5, -0.3, -0.3, -0.2, -0.3, -1.0),
    (0.2, 0.2, -0.2, -3.5, -2.0, -0.5, -3.0),
    (0.8, 0.8, -1.0, -1.5, -0.8, -3.0, -1.0),
)
ENTRY_EXIT_WEIGHTS = (0.5, 0.3, 0.2)
GAME_FIXED_COSTS = (1.9, 1.8, 1.7, 1.6, 1.5, 1.4, 1.3)
MARKET_SIZE_CHAIN = np.array(
    [
        [0.8, 0.2, 0.0, 0.0, 0.0],
        [0.2, 0.6, 0.2, 0.0, 0.0],
        [0.0, 0.2, 0.6, 0.2, 0.0],
        [0.0, 0.0, 0.2, 0.6, 0.2],
        [0.0, 0.0, 0.0, 0.2, 0.8],
    ]
)

# stream ids for the counter-based generator
_TYPE_STREAM = 1 << 20
_TRANSITION_STREAM = 1 << 10


def _check_weights(pi, n):
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != (n,) or np.any(pi <= 0) or abs(pi.sum() - 1.0) > 1e-10:
        raise InputError(f"type weights must be {n} positive numbers summing to 1, got {pi.tolist()}")
    return pi / pi.sum()


# ------------------------------------------------------------------ entry / exit


@dataclass(frozen=True)
class EntryExitSpec:
    """Single-agent entry/exit with productivity ``w`` and four AR(1) shifters.

    ``dependence="NFD"`` lets the current action shift next-period
    productivity, which breaks two-period finite dependence.
    """

    dependence: str = "FD"
    beta: float = 0.95
    n_grid: int = 6
    type_params: tuple = ENTRY_EXIT_TYPES
    type_weights: tuple = ENTRY_EXIT_WEIGHTS
    n_markets: int = 5000
    n_periods: int = 20
    seed: int = 0
    burn_in: int = 100
    n_sigma: float = 3.0
    productivity_shift: float = 0.3

    def __post_init__(self):
        if self.dependence not in ("FD", "NFD"):
            raise InputError(f"dependence must be 'FD' or 'NFD', got {self.dependence!r}")
        if not 0.0 <= self.beta < 1.0:
            raise InputError(f"beta must lie in [0, 1), got {self.beta}")
        if int(self.n_grid) < 2:
            raise InputError("n_grid must be at least 2")
        theta = np.atleast_2d(np.asarray(self.type_params, dtype=np.float64))
        if theta.shape[1] != 7:
            raise InputError(f"entry/exit type vectors have 7 coordinates, got {theta.shape[1]}")
        _check_weights(self.type_weights, theta.shape[0])
        if self.n_markets < 1 or self.n_periods < 1 or self.burn_in < 0:
            raise InputError("n_markets and n_periods must be positive, burn_in non-negative")


def build_entry_exit_model(spec: EntryExitSpec) -> MixtureDDCModel:
    """Entry/exit model on ``2 * n_grid**5`` states.

    States are ordered lag-major, then ``(w, z1, z2, z3, z4)`` row-major.
    Coefficients carry their economic sign: a fixed operating cost of 0.3
    is ``fc0 = -0.3``.
    """
    n = int(spec.n_grid)
    z_grid, z_mat = tauchen_discretize(Ar1Spec(0.0, 0.6, 1.0, n, spec.n_sigma))
    if spec.dependence == "FD":
        w_grid, w_mats = tauchen_discretize(Ar1Spec(0.2, 0.6, 1.0, n, spec.n_sigma))
        factors = [[w_mats[0]] + [z_mat[0]] * 4] * 2
    else:
        w_grid, w_mats = tauchen_discretize(
            Ar1Spec(0.2, 0.6, 1.0, n, spec.n_sigma, action_shift=spec.productivity_shift)
        )
        zf = z_mat[0]
        factors = [[w_mats[a], zf, zf, zf, zf] for a in range(2)]
    kernel = LaggedActionTransition(factors)
    mesh = np.stack(np.meshgrid(w_grid, z_grid, z_grid, z_grid, z_grid, indexing="ij"), -1).reshape(-1, 5)
    lag = np.repeat([0.0, 1.0], mesh.shape[0])
    exo = np.tile(mesh, (2, 1))
    w, z1, z2, z3, z4 = exo.T
    ew = np.exp(w)
    X = exo.shape[0]
    basis = np.zeros((1, X, 2, 7))
    basis[0, :, 1] = np.column_stack([ew, z1 * ew, z2 * ew, np.ones(X), z3, 1.0 - lag, (1.0 - lag) * z4])
    return MixtureDDCModel(
        basis=basis,
        transition=kernel,
        beta=spec.beta,
        n_actions=2,
        type_params=np.asarray(spec.type_params, dtype=np.float64),
        type_weights=np.asarray(spec.type_weights, dtype=np.float64),
        param_names=ENTRY_EXIT_PARAMS,
        state_values=np.column_stack([exo, lag]),
        state_names=("w", "z1", "z2", "z3", "z4", "lag"),
        name=f"entry_exit_{spec.dependence}",
    )


# ------------------------------------------------------------------ entry game


@dataclass(frozen=True)
class EntryGameSpec:
    """``n_firms`` firms choosing active/inactive in markets of size 1..5."""

    n_firms: int = 7
    theta_rs: float = 1.0
    theta_rc: float = 2.4
    theta_ec: float = 1.0
    fixed_costs: tuple | None = None
    beta: float = 0.95
    size_transition: tuple | None = None
    n_markets: int = 1600
    n_periods: int = 10
    seed: int = 0
    burn_in: int = 100

    def __post_init__(self):
        if self.n_firms < 1:
            raise InputError("need at least one firm")
        if not 0.0 <= self.beta < 1.0:
            raise InputError(f"beta must lie in [0, 1), got {self.beta}")
        fc = self.costs()
        if fc.shape != (self.n_firms,):
            raise InputError(f"need {self.n_firms} fixed costs, got {fc.size}")
        F = self.size_chain()
        if F.ndim != 2 or F.shape[0] != F.shape[1] or np.any(F < 0) or np.max(np.abs(F.sum(1) - 1)) > 1e-10:
            raise InputError("market-size transition must be square with rows summing to 1")
        if self.n_markets < 1 or self.n_periods < 1 or self.burn_in < 0:
            raise InputError("n_markets and n_periods must be positive, burn_in non-negative")

    def costs(self) -> np.ndarray:
        if self.fixed_costs is None:
            if self.n_firms > len(GAME_FIXED_COSTS):
                raise InputError(f"default fixed costs cover at most {len(GAME_FIXED_COSTS)} firms")
            return np.array(GAME_FIXED_COSTS[: self.n_firms])
        return np.asarray(self.fixed_costs, dtype=np.float64)

    def size_chain(self) -> np.ndarray:
        if self.size_transition is None:
            return MARKET_SIZE_CHAIN
        return np.asarray(self.size_transition, dtype=np.float64)

    def true_theta(self) -> np.ndarray:
        return np.concatenate([[self.theta_rs, self.theta_rc, self.theta_ec], self.costs()])


def build_entry_game_model(spec: EntryGameSpec) -> MixtureDDCModel:
    """Entry game; state index is ``lag_profile * n_sizes + size_index``.

    Parameters are ``(rs, rc, ec, fc_1..fc_J)``; the basis carries the minus
    signs so all true values are positive.
    """
    J = spec.n_firms
    F = spec.size_chain()
    S = F.shape[0]
    sizes = np.arange(1, S + 1, dtype=np.float64)
    prof = action_profiles(J, 2)
    C = prof.shape[0]
    kernel = LaggedActionTransition([[F]] * C)
    X = C * S
    lag = np.repeat(prof, S, axis=0).astype(np.float64)  # (X, J)
    s = np.tile(sizes, C)
    d = 3 + J
    basis = np.zeros((J, X, C, d))
    active_total = prof.sum(axis=1)
    for j in range(J):
        on = prof[:, j] == 1
        rivals = active_total[on] - 1
        basis[j][:, on, 0] = s[:, None]
        basis[j][:, on, 1] = -np.log1p(rivals)[None, :]
        basis[j][:, on, 2] = -(1.0 - lag[:, j])[:, None]
        basis[j][:, on, 3 + j] = -1.0
    return MixtureDDCModel(
        basis=basis,
        transition=kernel,
        beta=spec.beta,
        n_actions=2,
        type_params=spec.true_theta()[None, :],
        type_weights=np.ones(1),
        param_names=("rs", "rc", "ec") + tuple(f"fc{j + 1}" for j in range(J)),
        state_values=np.column_stack([s, lag]),
        state_names=("size",) + tuple(f"lag{j + 1}" for j in range(J)),
        name=f"entry_game_J{J}",
    )


# ------------------------------------------------------------------ solving


def solve_type_policy(model: MixtureDDCModel, m: int, tol: float = 1e-10):
    """Bellman fixed point ``(V, P)`` of type ``m`` in a single-agent model."""
    if model.n_firms != 1:
        raise ConfigError("solve_type_policy handles single-agent models; use solve_game_equilibrium")
    problem = bellman_problem(model, 0, m, None, np.full((1, model.n_states, model.n_actions), 1.0))
    u_scale = float(np.max(np.abs(model.flow_utility(model.type_params[m])))) + 1.0
    target = max(tol, 1e-14 * u_scale / max(1.0 - model.beta, 1e-12))
    V, rep = newton_kantorovich(problem.mapping, problem.jacobian, np.zeros(model.n_states), 200, target)
    if not rep.converged:
        raise DivergenceError(
            f"type {m}: Bellman-Newton stopped at residual {rep.final_residual_norm:.2e}", rep.iterations_used
        )
    u = model.flow_utility(model.type_params[m])[0]
    v = u + model.beta * model.transition.expect(V)
    return V, logit_ccp(v)[None]


def best_response(model: MixtureDDCModel, theta, P, tol: float = 1e-13):
    """Logit best response to ``P`` with values from the policy valuation system.

    Returns ``(Lambda(P), v, V)``.
    """
    W = rival_weights(model, P)
    phibar = expected_basis(model, W)
    u = phibar @ np.asarray(theta, dtype=np.float64)
    b = (np.einsum("jxa,jxa->jx", P, u) + ccp_entropy(P) + model.value_shift).T
    A = policy_transition(model, P).identity_minus(model.beta)
    scale = float(np.max(np.abs(b))) + 1.0
    V, rep = gmres(A, b, None, INF, tol * scale)
    v = u + model.beta * expected_values(model, W, V.T)
    return logit_ccp(v), v, V.T


def equilibrium_residual(model: MixtureDDCModel, theta, P) -> float:
    lam, _, _ = best_response(model, theta, P)
    return float(np.max(np.abs(P - lam)))


def solve_game_equilibrium(
    model: MixtureDDCModel,
    m: int = 0,
    P0=None,
    tol: float = 1e-10,
    max_iter: int = 2000,
    newton_from: float = 1e-5,
):
    """Markov perfect equilibrium reached from ``P0`` (uniform by default).

    Spectrally damped best-response iteration brings the residual below
    ``newton_from``; Newton steps on conditional values then polish it to
    ``tol``.
    """
    if model.n_firms < 2:
        raise ConfigError("solve_game_equilibrium needs at least two firms; use solve_type_policy")
    theta = model.type_params[m]
    J, X, A = model.n_firms, model.n_states, model.n_actions
    P = np.full((J, X, A), 1.0 / A) if P0 is None else floor_ccp(np.array(P0, dtype=np.float64))
    lam, v, _ = best_response(model, theta, P)
    phi = P - lam
    res = float(np.max(np.abs(phi)))
    prev_P = prev_phi = None
    k = 0
    while res > max(tol, newton_from) and k < max_iter:
        if prev_P is None:
            alpha = bb_step_size(None, None, 0, float(np.linalg.norm(phi)))
        else:
            alpha = bb_step_size(P - prev_P, phi - prev_phi, k, float(np.linalg.norm(phi)))
        alpha = min(alpha, 1.0)
        prev_P, prev_phi = P, phi
        P = floor_ccp(np.clip(P - alpha * phi, CCP_FLOOR, 1.0))
        lam, v, _ = best_response(model, theta, P)
        phi = P - lam
        res = float(np.max(np.abs(phi)))
        k += 1
    for _ in range(50):
        if res <= tol:
            break
        pt = epl_point(model, v)
        rhs = (v - epl_phi(model, theta, v, pt)).ravel()
        step, rep = gmres(epl_operator(model, theta, pt), rhs, None, INF, 1e-3 * tol)
        v = v - step.reshape(v.shape)
        P = logit_ccp(v)
        lam, v, _ = best_response(model, theta, P)
        res = float(np.max(np.abs(P - lam)))
        P = lam
        k += 1
    if res > tol:
        raise DivergenceError(f"equilibrium search stopped at residual {res:.2e} after {k} steps", k)
    return P


def solve_true_ccps(model: MixtureDDCModel) -> np.ndarray:
    """True CCPs ``(M, J, X, A)`` for every type."""
    if model.n_firms == 1:
        return np.stack([solve_type_policy(model, m)[1] for m in range(model.n_types)])
    return np.stack([solve_game_equilibrium(model, m) for m in range(model.n_types)])


# ------------------------------------------------------------------ simulation


def _initial_state(model: MixtureDDCModel) -> int:
    kern = model.transition
    if isinstance(kern, LaggedActionTransition):
        mid = np.ravel_multi_index(tuple(d // 2 for d in kern.exo_dims), kern.exo_dims)
        return int(mid)
    return 0


def simulate_panel(
    model: MixtureDDCModel,
    ccps,
    type_weights,
    n_markets: int,
    n_periods: int,
    seed: int,
    burn_in: int = 100,
) -> PanelData:
    """Simulate markets that each draw one latent type and then follow its CCPs.

    Every draw is hashed from ``(seed, market, period, stream)``, so the
    panel for market ``i`` does not depend on how many other markets are
    simulated.
    """
    P = np.asarray(ccps, dtype=np.float64)
    if P.ndim == 3:
        P = P[None]
    M, J, X, A = P.shape
    if (J, X, A) != (model.n_firms, model.n_states, model.n_actions):
        raise InputError(f"CCPs of shape {P.shape[1:]} do not match the model")
    pi = _check_weights(type_weights, M)
    markets = np.arange(n_markets, dtype=np.int64)
    u_type = counter_uniforms(seed, markets, 0, _TYPE_STREAM)
    types = draw_categorical(np.broadcast_to(np.cumsum(pi), (n_markets, M)), u_type)
    cdf = np.cumsum(P, axis=3)
    x = np.full(n_markets, _initial_state(model), dtype=np.int64)
    states = np.empty((n_markets, n_periods), dtype=np.int64)
    actions = np.empty((n_markets, n_periods, J), dtype=np.int64)
    powers = A ** np.arange(J - 1, -1, -1)
    n_streams = model.transition.n_streams
    for t in range(burn_in + n_periods):
        act = np.empty((n_markets, J), dtype=np.int64)
        for j in range(J):
            u = counter_uniforms(seed, markets, t, j)
            act[:, j] = draw_categorical(cdf[types, j, x], u)
        if t >= burn_in:
            states[:, t - burn_in] = x
            actions[:, t - burn_in] = act
        c = act @ powers
        u_next = np.column_stack(
            [counter_uniforms(seed, markets, t, _TRANSITION_STREAM + k) for k in range(n_streams)]
        )
        x = model.transition.sample_next(x, c, u_next)
    return PanelData(states, actions, types, {"seed": int(seed), "burn_in": int(burn_in)})


# ------------------------------------------------------------------ initial CCPs


def frequency_ccp(data: PanelData, model: MixtureDDCModel, smoothing: float = 0.5) -> np.ndarray:
    """Laplace-smoothed empirical CCPs ``(J, X, A)``; unvisited states are uniform."""
    J, X, A = model.n_firms, model.n_states, model.n_actions
    counts = np.asarray(data.market_counts(X, A).sum(axis=0)).reshape(J, X, A)
    tot = counts.sum(axis=2, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        P = (counts + smoothing) / (tot + smoothing * A)
    P = np.where(tot + smoothing * A > 0, P, 1.0 / A)
    return floor_ccp(P)


@dataclass(frozen=True)
class SieveInitConfig:
    degree: int = 2
    n_types: int = 3
    restarts: int = 20
    n_clusters: int | None = None
    em_tol: float = 1e-6
    em_max_iter: int = 500
    ridge: float = 1e-4
    random_scale: float = 0.5
    mode: str = "kmeans"

    def __post_init__(self):
        if self.degree < 1:
            raise InputError("sieve degree must be at least 1")
        if self.n_types < 1:
            raise InputError("need at least one type")
        if self.mode not in ("kmeans", "random"):
            raise InputError(f"mode must be 'kmeans' or 'random', got {self.mode!r}")


def sieve_basis(model: MixtureDDCModel, degree: int = 2) -> np.ndarray:
    """Standardized polynomial features of the state variables, with intercept."""
    if model.state_values is None:
        raise ConfigError("sieve initialization needs model.state_values")
    from sklearn.preprocessing import PolynomialFeatures

    sv = model.state_values
    sd = sv.std(axis=0)
    z = (sv - sv.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    B = PolynomialFeatures(degree, include_bias=False).fit_transform(z)
    # binary state variables make some powers duplicate lower-order terms
    _, keep = np.unique(np.round(B, 12), axis=1, return_index=True)
    B = B[:, np.sort(keep)]
    bsd = B.std(axis=0)
    B = (B - B.mean(axis=0)) / np.where(bsd > 0, bsd, 1.0)
    B = B[:, bsd > 0]
    return np.column_stack([np.ones(B.shape[0]), B])


def fit_sieve_logit(B, counts, ridge: float = 1e-4, alpha0=None, max_iter: int = 100):
    """Weighted multinomial logit on aggregated counts ``(X, A)``.

    Returns coefficients ``(A-1, K)`` for non-base actions (action 0 is the
    base).  ``ridge`` is scaled by the total count.
    """
    X, K = B.shape
    A = counts.shape[1]
    n = counts.sum(axis=1)
    total = max(float(n.sum()), 1.0)
    lam = ridge * total
    alpha = np.zeros((A - 1, K)) if alpha0 is None else np.array(alpha0, dtype=np.float64)
    pen = np.eye(K)
    pen[0, 0] = 1e-8  # leave the intercept nearly free

    def objective(a):
        v = np.column_stack([np.zeros(X), B @ a.T])
        lp = v - social_surplus(v)[:, None]
        return -float(np.sum(counts * lp)) + 0.5 * lam * float(np.sum((a @ pen) * a))

    f = objective(alpha)
    for _ in range(max_iter):
        v = np.column_stack([np.zeros(X), B @ alpha.T])
        P = logit_ccp(v, 0.0)
        resid = counts[:, 1:] - n[:, None] * P[:, 1:]
        g = -(resid.T @ B) + lam * alpha @ pen
        H = np.zeros((A - 1, K, A - 1, K))
        for a in range(A - 1):
            for b in range(A - 1):
                w = n * P[:, 1 + a] * ((a == b) - P[:, 1 + b])
                H[a, :, b, :] = (B * w[:, None]).T @ B
        H = H.reshape((A - 1) * K, (A - 1) * K) + lam * np.kron(np.eye(A - 1), pen)
        step = np.linalg.solve(H, g.ravel()).reshape(alpha.shape)
        t = 1.0
        while t > 1e-8:
            cand = alpha - t * step
            fc = objective(cand)
            if fc <= f:
                break
            t *= 0.5
        alpha, f_old, f = cand, f, fc
        if np.max(np.abs(g)) / total < 1e-9 or f_old - f < 1e-12 * total:
            break
    return alpha


def sieve_ccp(B, alpha) -> np.ndarray:
    v = np.column_stack([np.zeros(B.shape[0]), B @ alpha.T])
    return logit_ccp(v)


def _type_ccps_from_alpha(B, alphas) -> np.ndarray:
    """``alphas`` is ``(M, J, A-1, K)``; returns CCPs ``(M, J, X, A)``."""
    return np.stack([np.stack([sieve_ccp(B, a) for a in am]) for am in alphas])


def _per_market_features(data: PanelData, model, pooled) -> np.ndarray:
    J, X, A = model.n_firms, model.n_states, model.n_actions
    C = data.market_counts(X, A).toarray().reshape(-1, J, X, A)
    tot = C.sum(axis=3, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        freq = np.where(tot > 0, C / np.where(tot > 0, tot, 1.0), pooled[None])
    return freq[..., 1:].reshape(C.shape[0], -1)


def _kmeans_labels(features, k: int, seed: int, restarts: int) -> np.ndarray:
    from sklearn.cluster import KMeans

    for attempt in range(10):
        km = KMeans(n_clusters=k, n_init=restarts, random_state=(seed + attempt) % 2**32)
        labels = km.fit_predict(features)
        if np.bincount(labels, minlength=k).min() > 0:
            return labels
    raise EstimationError(f"k-means left an empty cluster after 10 reseeds (k={k})")


def sieve_logit_init(data: PanelData, model: MixtureDDCModel, config: SieveInitConfig, seed: int = 0):
    """Initial type CCPs ``(M, J, X, A)`` and weights from a sieve-logit EM.

    ``mode="kmeans"`` clusters per-market frequency CCPs and fits a sieve
    logit per cluster; ``mode="random"`` perturbs the pooled fit with
    normal noise.  Either start is refined by an EM over sieve CCPs.
    """
    from .estimator import posterior_weights, type_log_likelihoods

    J, X, A = model.n_firms, model.n_states, model.n_actions
    M = config.n_types
    B = sieve_basis(model, config.degree)
    counts = data.market_counts(X, A)
    agg = np.asarray(counts.sum(axis=0)).reshape(J, X, A)
    pooled = np.stack([fit_sieve_logit(B, agg[j], config.ridge) for j in range(J)])
    if M == 1:
        return _type_ccps_from_alpha(B, pooled[None]), np.ones(1)
    if config.mode == "kmeans":
        k = config.n_clusters or M
        if k != M:
            raise ConfigError("the cluster count must equal the number of types")
        pooled_P = np.stack([sieve_ccp(B, a) for a in pooled])
        labels = _kmeans_labels(_per_market_features(data, model, pooled_P), k, seed, config.restarts)
        resp = np.eye(M)[labels]
    else:
        rng = np.random.default_rng(seed)
        alphas = pooled[None] + config.random_scale * rng.standard_normal((M,) + pooled.shape)
        logP = np.log(_type_ccps_from_alpha(B, alphas)).reshape(M, -1)
        resp, _ = posterior_weights(type_log_likelihoods(counts, logP), np.full(M, 1.0 / M))
    alphas = np.repeat(pooled[None], M, axis=0)
    prev = -np.inf
    for _ in range(config.em_max_iter):
        pi = resp.mean(axis=0)
        wc = np.asarray(counts.T @ resp).T.reshape(M, J, X, A)
        alphas = np.stack(
            [np.stack([fit_sieve_logit(B, wc[m, j], config.ridge, alphas[m, j]) for j in range(J)]) for m in range(M)]
        )
        logP = np.log(_type_ccps_from_alpha(B, alphas)).reshape(M, -1)
        resp, ll = posterior_weights(type_log_likelihoods(counts, logP), pi)
        if ll - prev < config.em_tol * max(1.0, abs(ll)):
            break
        prev = ll
    pi = resp.mean(axis=0)
    order = np.argsort(-pi, kind="stable")
    return _type_ccps_from_alpha(B, alphas)[order], pi[order]
