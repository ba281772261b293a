"""Matrix-free linear operators and truncated inner solvers.

Every solver here accepts an iteration cap ``q`` that may be the sentinel
``INF``; the sentinel means "run to tolerance" with a safety cap of
``100 * dimension`` iterations.  Stopping rules use sup-norms, except inside
GMRES where the incrementally available 2-norm of the residual is used (it
bounds the sup-norm from above, so the test is never looser).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import reduce
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionError, DivergenceError, InputError, SingularSystemError
from .kernels import givens_step

INF = math.inf
SAFETY_FACTOR = 100


def resolve_cap(q, dimension: int) -> int:
    """Translate an iteration cap (possibly ``INF`` or ``None``) into an int."""
    if q is None or (isinstance(q, float) and math.isinf(q)):
        return SAFETY_FACTOR * max(int(dimension), 1)
    q = int(q)
    if q < 1:
        raise InputError(f"iteration cap must be >= 1, got {q}")
    return q


def is_infinite(q) -> bool:
    return q is None or (isinstance(q, float) and math.isinf(q))


@dataclass
class SolverReport:
    iterations_used: int
    final_residual_norm: float
    converged: bool
    wall_time: float
    history: list = field(default_factory=list)
    note: str = ""


class LinearOperator:
    """A square linear map given only through its action.

    ``apply`` must accept a vector of length ``dimension`` and, for batched
    use, a ``(dimension, k)`` block whose columns are mapped independently.
    """

    def __init__(self, dimension: int, apply: Callable[[np.ndarray], np.ndarray]):
        dimension = int(dimension)
        if dimension < 1:
            raise InputError(f"operator dimension must be positive, got {dimension}")
        self.dimension = dimension
        self._apply = apply

    @property
    def shape(self):
        return (self.dimension, self.dimension)

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.dimension:
            raise DimensionError(
                f"operator expects leading length {self.dimension}, got {x.shape[0]}"
            )
        return np.asarray(self._apply(x), dtype=np.float64)

    matvec = apply

    def __matmul__(self, x):
        return self.apply(x)

    def dense(self) -> np.ndarray:
        return self.apply(np.eye(self.dimension))

    @classmethod
    def from_matrix(cls, matrix) -> "LinearOperator":
        m = np.array(matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"expected a square matrix, got shape {m.shape}")
        return cls(m.shape[0], lambda x: m @ x)

    def identity_minus(self, scale: float = 1.0) -> "LinearOperator":
        """The operator ``x -> x - scale * self(x)``."""
        return LinearOperator(self.dimension, lambda x: x - scale * self.apply(x))


def kron_matvec(factors: Sequence[np.ndarray], v) -> np.ndarray:
    """Apply ``F_1 (x) ... (x) F_K`` to ``v`` one mode at a time.

    ``v`` may carry trailing columns; each is transformed independently.
    The flat index is row-major over the factor dimensions.
    """
    mats = [np.asarray(f, dtype=np.float64) for f in factors]
    if not mats:
        raise InputError("kron_matvec needs at least one factor")
    for f in mats:
        if f.ndim != 2 or f.shape[0] != f.shape[1]:
            raise DimensionError(f"Kronecker factors must be square, got shape {f.shape}")
    dims = [f.shape[0] for f in mats]
    n = int(np.prod(dims))
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 0 or v.shape[0] != n:
        got = v.shape[0] if v.ndim else 0
        raise DimensionError(f"kron_matvec: expected vector of length {n}, got {got}")
    rest = int(np.prod(v.shape[1:], dtype=np.int64))
    t = v.reshape(n, rest)
    before, after = 1, n
    for f, size in zip(mats, dims):
        after //= size
        t = np.matmul(f, t.reshape(before, size, after * rest))
        before *= size
    return t.reshape(v.shape)


class KroneckerOperator(LinearOperator):
    def __init__(self, factors: Sequence[np.ndarray]):
        self.factors = [np.array(f, dtype=np.float64) for f in factors]
        for f in self.factors:
            f.setflags(write=False)
        dim = int(np.prod([f.shape[0] for f in self.factors]))
        super().__init__(dim, lambda x: kron_matvec(self.factors, x))

    def dense(self) -> np.ndarray:
        return reduce(np.kron, self.factors)


def _grow(a, shape):
    out = np.zeros(shape)
    out[tuple(slice(0, d) for d in a.shape)] = a
    return out


def _check_finite(name, x):
    if not np.all(np.isfinite(x)):
        raise InputError(f"{name} contains non-finite values")


def gmres(A: LinearOperator, b, y0=None, q=INF, tol: float = 1e-8):
    """Unrestarted GMRES with Givens rotations.

    ``b`` may be a vector or an ``(n, k)`` block; block columns are solved as
    independent systems sharing operator applications.  Iteration stops at
    ``min(q, n)`` Arnoldi steps, on lucky breakdown, or once the residual
    2-norm is at most ``tol``.

    Returns
    -------
    y : ndarray shaped like ``b``
    report : SolverReport
        ``final_residual_norm`` is the largest column residual.
    """
    start = time.perf_counter()
    b = np.asarray(b, dtype=np.float64)
    single = b.ndim == 1
    B = b.reshape(-1, 1) if single else b
    n, k = B.shape
    if n != A.dimension:
        raise DimensionError(f"gmres: right-hand side has length {n}, operator {A.dimension}")
    Y0 = np.zeros_like(B) if y0 is None else np.array(y0, dtype=np.float64).reshape(n, k)
    _check_finite("b", B)
    _check_finite("y0", Y0)
    m = min(resolve_cap(q, n), n)

    R = B - A.apply(Y0)
    beta = np.linalg.norm(R, axis=0)
    cap = min(m, 32)
    basis = np.zeros((k, cap + 1, n))
    nz = beta > 0
    basis[nz, 0, :] = (R[:, nz] / beta[nz]).T
    H = np.zeros((k, cap + 1, cap))
    cs = np.zeros((k, cap))
    sn = np.zeros((k, cap))
    g = np.zeros((k, cap + 1))
    g[:, 0] = beta
    steps = np.zeros(k, dtype=np.int64)
    res = beta.copy()
    active = beta > tol
    broke = np.zeros(k, dtype=bool)
    history = [float(res.max()) if k else 0.0]

    for j in range(m):
        cols = np.flatnonzero(active)
        if cols.size == 0:
            break
        if j >= cap:
            new = min(2 * cap, m)
            basis = _grow(basis, (k, new + 1, n))
            H = _grow(H, (k, new + 1, new))
            cs = _grow(cs, (k, new))
            sn = _grow(sn, (k, new))
            g = _grow(g, (k, new + 1))
            cap = new
        full = cols.size == k
        V = basis[:, : j + 1] if full else basis[cols, : j + 1]
        w = A.apply(np.ascontiguousarray(V[:, j].T)).T.copy()
        if not np.all(np.isfinite(w)):
            raise DivergenceError("gmres: operator produced non-finite values", iteration=j + 1)
        w0 = np.linalg.norm(w, axis=1)
        h = np.matmul(V, w[:, :, None])[:, :, 0]
        w -= np.matmul(h[:, None, :], V)[:, 0, :]
        h2 = np.matmul(V, w[:, :, None])[:, :, 0]
        w -= np.matmul(h2[:, None, :], V)[:, 0, :]
        h += h2
        hn = np.linalg.norm(w, axis=1)
        H[cols, : j + 1, j] = h
        H[cols, j + 1, j] = hn
        resid = givens_step(H, cs, sn, g, j, cols)
        steps[cols] = j + 1
        res[cols] = resid
        brk = hn <= 1e-14 * np.maximum(w0, 1e-300)
        ok = ~brk
        if ok.any():
            basis[cols[ok], j + 1, :] = w[ok] / hn[ok, None]
        broke[cols[brk]] = True
        active[cols] = ok & (resid > tol)
        history.append(float(res.max()))

    Y = Y0.copy()
    for c in range(k):
        mc = int(steps[c])
        if mc == 0:
            continue
        Rm = H[c, :mc, :mc]
        if np.any(np.abs(np.diag(Rm)) == 0.0):
            raise SingularSystemError("gmres: singular Hessenberg factor (operator is singular)")
        coef = solve_triangular(Rm, g[c, :mc], lower=False, check_finite=False)
        Y[:, c] += basis[c, :mc].T @ coef

    final = float(res.max()) if k else 0.0
    report = SolverReport(
        iterations_used=int(steps.max()) if k else 0,
        final_residual_norm=final,
        converged=bool(np.all((res <= tol) | broke)),
        wall_time=time.perf_counter() - start,
        history=history,
        note="breakdown" if broke.any() else "",
    )
    return (Y[:, 0] if single else Y.reshape(b.shape)), report


def successive_approx(G: Callable, y0, q=INF, tol: float = 1e-8):
    """Iterate ``y <- G(y)`` at most ``q`` times.

    Stops early once ``max|y_k - y_{k-1}| <= tol``.
    """
    start = time.perf_counter()
    y = np.array(y0, dtype=np.float64)
    cap = resolve_cap(q, y.size)
    history = []
    diff = math.inf
    it = 0
    for it in range(1, cap + 1):
        y_new = np.asarray(G(y), dtype=np.float64)
        if not np.all(np.isfinite(y_new)):
            raise DivergenceError(f"successive approximation diverged at iteration {it}", it)
        diff = float(np.max(np.abs(y_new - y))) if y.size else 0.0
        history.append(diff)
        y = y_new
        if diff <= tol:
            break
    report = SolverReport(it, diff, diff <= tol, time.perf_counter() - start, history)
    return y, report


def newton_kantorovich(
    G: Callable,
    jacobian: Callable[[np.ndarray], LinearOperator],
    y0,
    q=INF,
    tol: float = 1e-8,
    linear_solve: Callable | None = None,
    inner_rtol: float = 1e-11,
):
    """Newton steps ``y <- y - [I - dG(y)]^{-1}(y - G(y))``.

    ``jacobian(y)`` returns the derivative of ``G`` at ``y`` as an operator
    on the flattened iterate.  ``linear_solve(A, r)`` defaults to GMRES run
    to a tolerance relative to ``||r||``.
    """
    start = time.perf_counter()
    y = np.array(y0, dtype=np.float64)
    shape = y.shape
    n = y.size
    cap = resolve_cap(q, n)

    def default_solve(A, r):
        return gmres(A, r, None, INF, inner_rtol * max(np.linalg.norm(r), 1e-300))

    solve = linear_solve or default_solve
    history = []
    steps = 0
    r = (y - np.asarray(G(y))).ravel()
    rn = float(np.max(np.abs(r))) if n else 0.0
    history.append(rn)
    best, stalled = rn, 0
    note = ""
    while rn > tol and steps < cap:
        J = jacobian(y)
        A = LinearOperator(n, lambda x, J=J: x - J.apply(x))
        try:
            d, rep = solve(A, r)
        except SingularSystemError as exc:
            raise SingularSystemError(
                f"Newton step {steps + 1}: linear system I - dG is singular (iterate residual {rn:.3e}): {exc}"
            ) from None
        if not np.all(np.isfinite(d)) or (
            not rep.converged and rep.final_residual_norm > 0.5 * np.linalg.norm(r)
        ):
            raise SingularSystemError(
                f"Newton step {steps + 1}: linear system I - dG is singular or unsolved "
                f"(iterate residual {rn:.3e})"
            )
        y = y - d.reshape(shape)
        steps += 1
        gy = np.asarray(G(y))
        if not np.all(np.isfinite(gy)):
            raise DivergenceError(f"Newton iterate {steps} is non-finite", steps)
        r = (y - gy).ravel()
        rn = float(np.max(np.abs(r)))
        history.append(rn)
        # an unbounded run stops once rounding error stops the residual falling
        if rn < best:
            best, stalled = rn, 0
        else:
            stalled += 1
        if is_infinite(q) and stalled >= 3:
            note = f"stalled at residual {best:.3e} after {steps} steps"
            break
    report = SolverReport(steps, rn, rn <= tol, time.perf_counter() - start, history, note)
    return y, report


def anderson_accelerate(
    G: Callable,
    y0,
    q=INF,
    memory: int = 5,
    tol: float = 1e-8,
    cond_max: float = 1e12,
):
    """Type-II Anderson acceleration with a sliding window.

    Each iteration costs one evaluation of ``G``.  The mixing least-squares
    problem is solved without regularization; if its condition number
    exceeds ``cond_max`` the step falls back to plain ``G(y)``.  With
    ``memory=0`` this is successive approximation.
    """
    start = time.perf_counter()
    if memory < 0:
        raise InputError("memory must be non-negative")
    x = np.array(y0, dtype=np.float64)
    shape = x.shape
    cap = resolve_cap(q, x.size)
    dF: list = []
    dG: list = []
    f_prev = g_prev = None
    history = []
    fallbacks = 0
    rn = math.inf
    it = 0
    for it in range(1, cap + 1):
        gx = np.asarray(G(x.reshape(shape)), dtype=np.float64).ravel()
        if not np.all(np.isfinite(gx)):
            raise DivergenceError(f"Anderson iterate {it} is non-finite", it)
        f = gx - x.ravel()
        rn = float(np.max(np.abs(f))) if f.size else 0.0
        history.append(rn)
        if rn <= tol:
            x = gx
            break
        if f_prev is not None and memory > 0:
            dF.append(f - f_prev)
            dG.append(gx - g_prev)
            if len(dF) > memory:
                dF.pop(0)
                dG.pop(0)
        f_prev, g_prev = f, gx
        if dF:
            Fm = np.column_stack(dF)
            s = np.linalg.svd(Fm, compute_uv=False)
            if s[-1] == 0.0 or s[0] / s[-1] > cond_max:
                fallbacks += 1
                x = gx
                continue
            gamma = np.linalg.lstsq(Fm, f, rcond=None)[0]
            x = gx - np.column_stack(dG) @ gamma
        else:
            x = gx
    note = f"{fallbacks} fallback steps" if fallbacks else ""
    report = SolverReport(it, rn, rn <= tol, time.perf_counter() - start, history, note)
    return x.reshape(shape), report


def bb_step_size(delta_P, delta_Phi, k: int, phi0_norm: float, return_flag: bool = False):
    """Barzilai-Borwein step ``||dP||^2 / <dP, dPhi>``.

    ``k = 0``, or a step that is not finite and positive, gives
    ``min(1, 1/phi0_norm)``; callers pass the current residual norm there.
    """
    fallback = min(1.0, 1.0 / phi0_norm) if phi0_norm > 0 else 1.0
    flag = False
    if k == 0:
        alpha = fallback
    else:
        dp = np.ravel(delta_P)
        dphi = np.ravel(delta_Phi)
        inner = float(dp @ dphi)
        alpha = float(dp @ dp) / inner if inner != 0.0 else math.nan
        if not math.isfinite(alpha) or alpha <= 0.0:
            alpha, flag = fallback, True
    return (alpha, flag) if return_flag else alpha
