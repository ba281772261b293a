"""Observed panels of markets x periods x firms."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import DimensionError, InputError

HEADER = ("market", "period", "firm", "state_index", "action")


@dataclass(frozen=True, eq=False)
class PanelData:
    """Rectangular panel: ``states[i, t]`` and ``actions[i, t, j]``.

    ``types`` optionally carries the latent type of each market (known only
    for simulated data).
    """

    states: np.ndarray
    actions: np.ndarray
    types: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        s = np.array(self.states, dtype=np.int64)
        a = np.array(self.actions, dtype=np.int64)
        if a.ndim == 2:
            a = a[:, :, None]
        if s.ndim != 2 or a.ndim != 3 or a.shape[:2] != s.shape:
            raise DimensionError(
                f"states must be (N, T) and actions (N, T, J); got {s.shape} and {a.shape}"
            )
        if s.size == 0:
            raise InputError("panel is empty")
        if s.min() < 0 or a.min() < 0:
            raise InputError("state and action indices must be non-negative")
        for arr in (s, a):
            arr.setflags(write=False)
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "actions", a)
        if self.types is not None:
            t = np.array(self.types, dtype=np.int64)
            if t.shape != (s.shape[0],):
                raise DimensionError(f"types must have length {s.shape[0]}")
            t.setflags(write=False)
            object.__setattr__(self, "types", t)

    @property
    def n_markets(self) -> int:
        return self.states.shape[0]

    @property
    def n_periods(self) -> int:
        return self.states.shape[1]

    @property
    def n_firms(self) -> int:
        return self.actions.shape[2]

    def check_against(self, n_states: int, n_actions: int, n_firms: int) -> None:
        if self.n_firms != n_firms:
            raise DimensionError(f"panel has {self.n_firms} firms; model has {n_firms} (field: firm)")
        if self.states.max() >= n_states:
            raise DimensionError(
                f"state_index {self.states.max()} out of range for {n_states} states (field: state_index)"
            )
        if self.actions.max() >= n_actions:
            raise DimensionError(
                f"action {self.actions.max()} out of range for {n_actions} actions (field: action)"
            )

    def market_counts(self, n_states: int, n_actions: int) -> sparse.csr_matrix:
        """Sparse ``(N, J*X*A)`` counts of (firm, state, action) per market."""
        key = (n_states, n_actions)
        cache = self.__dict__.setdefault("_counts_cache", {})
        if key not in cache:
            self.check_against(n_states, n_actions, self.n_firms)
            N, T, J = self.actions.shape
            firm = np.broadcast_to(np.arange(J), (N, T, J))
            col = (firm * n_states + self.states[:, :, None]) * n_actions + self.actions
            row = np.broadcast_to(np.arange(N)[:, None, None], (N, T, J))
            mat = sparse.coo_matrix(
                (np.ones(col.size), (row.ravel(), col.ravel())),
                shape=(N, J * n_states * n_actions),
            ).tocsr()
            mat.sum_duplicates()
            cache[key] = mat
        return cache[key]

    def subset(self, markets) -> "PanelData":
        idx = np.asarray(markets)
        types = None if self.types is None else self.types[idx]
        return PanelData(self.states[idx], self.actions[idx], types, dict(self.meta))

    def to_csv(self, path, include_types: bool = False) -> None:
        path = Path(path)
        N, T, J = self.actions.shape
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            header = list(HEADER) + (["type"] if include_types and self.types is not None else [])
            w.writerow(header)
            for i in range(N):
                for t in range(T):
                    for j in range(J):
                        row = [i, t, j, int(self.states[i, t]), int(self.actions[i, t, j])]
                        if len(header) == 6:
                            row.append(int(self.types[i]))
                        w.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "PanelData":
        path = Path(path)
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise InputError(f"{path}: empty file") from None
            header = [h.strip() for h in header]
            if tuple(header[:5]) != HEADER or len(header) > 6:
                raise InputError(f"{path}: row 1: expected header {','.join(HEADER)}[,type]")
            has_type = len(header) == 6
            rows = []
            for lineno, rec in enumerate(reader, start=2):
                if not rec:
                    continue
                if len(rec) != len(header):
                    raise InputError(f"{path}: row {lineno}: expected {len(header)} fields, got {len(rec)}")
                try:
                    rows.append([int(v) for v in rec])
                except ValueError:
                    raise InputError(f"{path}: row {lineno}: non-integer field") from None
        if not rows:
            raise InputError(f"{path}: no data rows")
        arr = np.array(rows, dtype=np.int64)
        if arr[:, :4].min() < 0 or arr[:, 4].min() < 0:
            raise InputError(f"{path}: negative index in data")
        N, T, J = arr[:, 0].max() + 1, arr[:, 1].max() + 1, arr[:, 2].max() + 1
        if len(arr) != N * T * J:
            raise InputError(f"{path}: panel is not rectangular ({len(arr)} rows for {N}x{T}x{J})")
        states = np.full((N, T), -1, dtype=np.int64)
        actions = np.full((N, T, J), -1, dtype=np.int64)
        actions[arr[:, 0], arr[:, 1], arr[:, 2]] = arr[:, 4]
        states_seen = np.full((N, T), -1, dtype=np.int64)
        states_seen[arr[:, 0], arr[:, 1]] = arr[:, 3]
        if np.any(actions < 0):
            raise InputError(f"{path}: duplicate or missing (market, period, firm) rows")
        # every firm row in a (market, period) must report the same state
        check = states_seen[arr[:, 0], arr[:, 1]] != arr[:, 3]
        if check.any():
            bad = int(np.flatnonzero(check)[0]) + 2
            raise InputError(f"{path}: row {bad}: state_index disagrees within a market-period")
        states[:] = states_seen
        types = None
        if has_type:
            types = np.zeros(N, dtype=np.int64)
            types[arr[:, 0]] = arr[:, 5]
        return cls(states, actions, types)
