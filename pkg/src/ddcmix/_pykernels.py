"""Pure numpy implementations of the loop-bound kernels.

Every function here has a compiled twin in ``_ckernels.pyx`` with the same
signature; ``ddcmix.kernels`` picks one at import time.
"""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z):
    with np.errstate(over="ignore"):
        z = z + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def counter_uniforms(seed, markets, period, stream):
    """Uniforms in [0, 1) hashed from (seed, market, period, stream)."""
    m = np.asarray(markets, dtype=np.int64).astype(np.uint64)
    h = _mix(np.full(m.shape, np.uint64(seed), dtype=np.uint64))
    h = _mix(h ^ m)
    h = _mix(h ^ np.uint64(period))
    h = _mix(h ^ np.uint64(stream))
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def draw_categorical(cdf, u):
    """Index of the first cumulative mass strictly above ``u`` for each row."""
    cdf = np.asarray(cdf, dtype=np.float64)
    k = cdf.shape[1]
    idx = (np.asarray(u)[:, None] >= cdf[:, : k - 1]).sum(axis=1)
    return idx.astype(np.int64)


def softmax_rows(v, floor):
    v = np.asarray(v, dtype=np.float64)
    z = np.exp(v - v.max(axis=1, keepdims=True))
    p = z / z.sum(axis=1, keepdims=True)
    if floor > 0.0:
        np.maximum(p, floor, out=p)
        p /= p.sum(axis=1, keepdims=True)
    return p


def logsumexp_rows(v):
    v = np.asarray(v, dtype=np.float64)
    mx = v.max(axis=1)
    return mx + np.log(np.exp(v - mx[:, None]).sum(axis=1))


def givens_step(H, cs, sn, g, j, cols):
    """Fold column ``j`` of each Hessenberg matrix into its QR factorization.

    ``H`` has shape (k, m + 1, m); ``cs``/``sn`` hold the rotations and ``g``
    the rotated right-hand side.  Only the systems listed in ``cols`` are
    touched.  Returns ``|g[c, j + 1]|`` for those systems.
    """
    out = np.empty(len(cols))
    for n, c in enumerate(cols):
        h = H[c]
        for i in range(j):
            t = cs[c, i] * h[i, j] + sn[c, i] * h[i + 1, j]
            h[i + 1, j] = -sn[c, i] * h[i, j] + cs[c, i] * h[i + 1, j]
            h[i, j] = t
        a, b = h[j, j], h[j + 1, j]
        r = np.hypot(a, b)
        if r == 0.0:
            cs[c, j], sn[c, j] = 1.0, 0.0
        else:
            cs[c, j], sn[c, j] = a / r, b / r
        h[j, j] = r
        h[j + 1, j] = 0.0
        g[c, j + 1] = -sn[c, j] * g[c, j]
        g[c, j] = cs[c, j] * g[c, j]
        out[n] = abs(g[c, j + 1])
    return out
