"""State transition kernels indexed by joint action profile.

A kernel answers one question: given a value array over next-period states,
what is its conditional expectation for every current state ``x`` and every
joint action profile ``c``?  Profiles are encoded row-major over firms with
firm 0 most significant.
"""

from __future__ import annotations

from functools import reduce
from typing import Sequence

import numpy as np

from .errors import DimensionError, InputError
from .kernels import draw_categorical
from .linalg import kron_matvec


class TransitionKernel:
    n_states: int
    n_profiles: int
    n_streams: int

    def expect(self, V) -> np.ndarray:
        """Return ``E[V(x') | x, c]`` with shape ``(X, C)`` or ``(X, C, k)``."""
        raise NotImplementedError

    def dense(self) -> np.ndarray:
        """Transition matrices stacked as ``(C, X, X)``."""
        raise NotImplementedError

    def sample_next(self, x, c, uniforms) -> np.ndarray:
        """Draw next states; ``uniforms`` has one column per stream."""
        raise NotImplementedError


class DenseTransition(TransitionKernel):
    def __init__(self, matrices):
        F = np.array(matrices, dtype=np.float64)
        if F.ndim != 3 or F.shape[1] != F.shape[2]:
            raise DimensionError(f"dense transitions need shape (C, X, X), got {F.shape}")
        if np.any(F < 0) or np.max(np.abs(F.sum(axis=2) - 1.0)) > 1e-10:
            raise InputError("transition rows must be non-negative and sum to 1")
        F.setflags(write=False)
        self.matrices = F
        self.n_profiles, self.n_states = F.shape[0], F.shape[1]
        self.n_streams = 1
        self._cdf = np.cumsum(F, axis=2)

    def expect(self, V):
        V = np.asarray(V, dtype=np.float64)
        if V.shape[0] != self.n_states:
            raise DimensionError(f"expected values over {self.n_states} states, got {V.shape[0]}")
        if V.ndim == 1:
            return (self.matrices @ V).T
        return np.einsum("cxy,yk->xck", self.matrices, V.reshape(self.n_states, -1))

    def dense(self):
        return self.matrices

    def sample_next(self, x, c, uniforms):
        return draw_categorical(self._cdf[c, x], uniforms[:, 0])


class LaggedActionTransition(TransitionKernel):
    """States ``(lagged profile, exogenous index)`` with a Kronecker exogenous part.

    The next lagged profile equals the current joint action.  The exogenous
    components move independently; their transition matrices may depend on
    the current joint action (``exo_factors[c]`` is the factor list used
    under profile ``c``).
    """

    def __init__(self, exo_factors: Sequence[Sequence[np.ndarray]]):
        if not exo_factors:
            raise InputError("need factor lists for at least one profile")
        cache: dict = {}
        lists = []
        for facs in exo_factors:
            mats = []
            for f in facs:
                key = id(f)
                if key not in cache:
                    arr = np.array(f, dtype=np.float64)
                    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
                        raise DimensionError(f"exogenous factor must be square, got {arr.shape}")
                    if np.any(arr < 0) or np.max(np.abs(arr.sum(axis=1) - 1.0)) > 1e-10:
                        raise InputError("exogenous factor rows must be non-negative and sum to 1")
                    arr.setflags(write=False)
                    cache[key] = arr
                mats.append(cache[key])
            lists.append(mats)
        self.exo_dims = tuple(f.shape[0] for f in lists[0])
        for mats in lists:
            if tuple(f.shape[0] for f in mats) != self.exo_dims:
                raise DimensionError("all profiles must use the same exogenous grid sizes")
        self.exo_factors = lists
        self.n_profiles = len(lists)
        self.n_lag = self.n_profiles
        self.n_exo = int(np.prod(self.exo_dims))
        self.n_states = self.n_lag * self.n_exo
        self.n_streams = len(self.exo_dims)
        groups: dict = {}
        for c, mats in enumerate(lists):
            groups.setdefault(tuple(id(f) for f in mats), []).append(c)
        self._groups = [(lists[cs[0]], np.array(cs)) for cs in groups.values()]
        self._cdfs = [[np.cumsum(f, axis=1) for f in mats] for mats in lists]

    @property
    def exogenous_is_action_free(self) -> bool:
        return len(self._groups) == 1

    def exo_expect(self, V) -> np.ndarray:
        """Compact form ``(C, n_exo, k)``: expectation given next lag ``c``."""
        V = np.asarray(V, dtype=np.float64)
        if V.shape[0] != self.n_states:
            raise DimensionError(f"expected values over {self.n_states} states, got {V.shape[0]}")
        k = int(np.prod(V.shape[1:], dtype=np.int64))
        Vr = V.reshape(self.n_lag, self.n_exo, k)
        G = np.empty((self.n_profiles, self.n_exo, k))
        for factors, prof in self._groups:
            g = len(prof)
            block = Vr[prof].transpose(1, 0, 2).reshape(self.n_exo, g * k)
            out = kron_matvec(factors, block)
            G[prof] = out.reshape(self.n_exo, g, k).transpose(1, 0, 2)
        return G

    def expect(self, V):
        V = np.asarray(V, dtype=np.float64)
        G = self.exo_expect(V)
        k = G.shape[2]
        EV = np.broadcast_to(
            G.transpose(1, 0, 2)[None], (self.n_lag, self.n_exo, self.n_profiles, k)
        ).reshape(self.n_states, self.n_profiles, k)
        return EV[:, :, 0] if V.ndim == 1 else EV.reshape((self.n_states, self.n_profiles) + V.shape[1:])

    def dense(self):
        out = np.zeros((self.n_profiles, self.n_states, self.n_states))
        for c, mats in enumerate(self.exo_factors):
            block = reduce(np.kron, mats)
            for lag in range(self.n_lag):
                rows = slice(lag * self.n_exo, (lag + 1) * self.n_exo)
                cols = slice(c * self.n_exo, (c + 1) * self.n_exo)
                out[c, rows, cols] = block
        return out

    def split(self, x):
        """Decompose flat states into (lag profile, exogenous component indices)."""
        x = np.asarray(x)
        lag, exo = np.divmod(x, self.n_exo)
        comps = np.unravel_index(exo, self.exo_dims)
        return lag, comps

    def sample_next(self, x, c, uniforms):
        x = np.asarray(x)
        c = np.asarray(c)
        _, comps = self.split(x)
        new = []
        for k, comp in enumerate(comps):
            nxt = np.empty_like(comp)
            for _, prof in self._groups:
                mask = np.isin(c, prof)
                if mask.any():
                    cdf = self._cdfs[prof[0]][k]
                    nxt[mask] = draw_categorical(cdf[comp[mask]], uniforms[mask, k])
            new.append(nxt)
        exo = np.ravel_multi_index(tuple(new), self.exo_dims)
        return c * self.n_exo + exo
