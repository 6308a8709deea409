"""Dynamic hypergraphs of individuals (nodes) and locations (hyperedges).

Incidence matrices are oriented nodes x hyperedges (``N x E``). Degree
inverses use the pseudo-inverse convention ``1/0 == 0`` so empty locations and
isolated individuals never produce NaNs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

SUSCEPTIBLE, INFECTED, RECOVERED = 0, 1, 2
MASKED = -1
STATE_LETTERS = ("S", "I", "R")


class HypergraphError(ValueError):
    """Raised for malformed hypergraph data."""


def _validate_triples(contacts: np.ndarray, N: int, E: int, T: int | None) -> None:
    if contacts.size == 0:
        return
    bounds = [(0, "t", T), (1, "location_id", E), (2, "individual_id", N)]
    for col, name, upper in bounds:
        if upper is None:
            continue
        bad = np.flatnonzero((contacts[:, col] < 0) | (contacts[:, col] >= upper))
        if bad.size:
            t, e, v = (int(x) for x in contacts[bad[0]])
            raise HypergraphError(
                f"contact (t={t}, location_id={e}, individual_id={v}) has {name} "
                f"out of range [0, {upper})"
            )


@dataclass(frozen=True, eq=False)
class DynamicHypergraph:
    """Fixed node/location universes with per-timestep incidences.

    ``contacts`` is an ``(M, 3)`` integer array of ``(t, location_id,
    individual_id)`` rows, stored sorted and de-duplicated.
    """

    num_individuals: int
    num_locations: int
    num_timesteps: int
    contacts: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.asarray(self.contacts, dtype=np.int64).reshape(-1, 3)
        _validate_triples(c, self.num_individuals, self.num_locations, self.num_timesteps)
        if c.size:
            order = np.lexsort((c[:, 2], c[:, 1], c[:, 0]))
            c = c[order]
            dup = np.all(c[1:] == c[:-1], axis=1)
            if dup.any():
                t, e, v = (int(x) for x in c[1:][dup][0])
                raise HypergraphError(f"duplicate contact (t={t}, location_id={e}, individual_id={v})")
        c.setflags(write=False)
        object.__setattr__(self, "contacts", c)

    @classmethod
    def from_location_matrix(cls, locations: np.ndarray, num_locations: int) -> "DynamicHypergraph":
        """Build from a ``(T, N)`` array giving each individual's location per timestep."""
        locations = np.asarray(locations, dtype=np.int64)
        T, N = locations.shape
        t_idx = np.repeat(np.arange(T), N)
        v_idx = np.tile(np.arange(N), T)
        contacts = np.column_stack([t_idx, locations.ravel(), v_idx])
        return cls(N, num_locations, T, contacts)

    def __eq__(self, other):
        if not isinstance(other, DynamicHypergraph):
            return NotImplemented
        return (
            self.num_individuals == other.num_individuals
            and self.num_locations == other.num_locations
            and self.num_timesteps == other.num_timesteps
            and np.array_equal(self.contacts, other.contacts)
        )

    @cached_property
    def _offsets(self) -> np.ndarray:
        return np.searchsorted(self.contacts[:, 0], np.arange(self.num_timesteps + 1))

    def contacts_at(self, t: int) -> np.ndarray:
        """``(location_id, individual_id)`` pairs present at timestep ``t``."""
        if not 0 <= t < self.num_timesteps:
            raise IndexError(f"timestep {t} outside [0, {self.num_timesteps})")
        lo, hi = self._offsets[t], self._offsets[t + 1]
        return self.contacts[lo:hi, 1:]

    def incidence(self, t: int) -> sp.csr_matrix:
        return build_incidence(self.contacts_at(t), self.num_individuals, self.num_locations)

    def location_contact_counts(self, t_end: int | None = None) -> np.ndarray:
        """Total individual-timestep incidences per location over ``[0, t_end)``."""
        hi = self._offsets[self.num_timesteps if t_end is None else t_end]
        return np.bincount(self.contacts[:hi, 1], minlength=self.num_locations)

    def truncate(self, num_timesteps: int) -> "DynamicHypergraph":
        hi = self._offsets[num_timesteps]
        return DynamicHypergraph(self.num_individuals, self.num_locations, num_timesteps, self.contacts[:hi])


def build_incidence(contacts, N: int, E: int) -> sp.csr_matrix:
    """Binary ``N x E`` incidence matrix from ``(location_id, individual_id)`` pairs."""
    pairs = np.asarray(contacts, dtype=np.int64).reshape(-1, 2)
    if pairs.size:
        for col, name, upper in ((0, "location", E), (1, "individual", N)):
            bad = np.flatnonzero((pairs[:, col] < 0) | (pairs[:, col] >= upper))
            if bad.size:
                e, v = (int(x) for x in pairs[bad[0]])
                raise HypergraphError(
                    f"contact (e{e}, v{v}): {name} index out of range [0, {upper})"
                )
    H = sp.csr_matrix(
        (np.ones(len(pairs)), (pairs[:, 1], pairs[:, 0])), shape=(N, E), dtype=np.float64
    )
    H.sum_duplicates()
    H.data[:] = 1.0
    return H


def pinv_diag(d: np.ndarray, power: float = 1.0) -> np.ndarray:
    """Element-wise ``d**-power`` with ``1/0 == 0``."""
    d = np.asarray(d, dtype=np.float64)
    out = np.zeros_like(d)
    nz = d > 0
    out[nz] = d[nz] ** (-power)
    return out


@dataclass(frozen=True)
class DegreeOperators:
    """Diagonals of D_v, D_e and W (stored as vectors)."""

    node_degree: np.ndarray
    edge_degree: np.ndarray
    edge_weight: np.ndarray

    @property
    def Dv(self) -> np.ndarray:
        return np.diag(self.node_degree)

    @property
    def De(self) -> np.ndarray:
        return np.diag(self.edge_degree)

    @property
    def W(self) -> np.ndarray:
        return np.diag(self.edge_weight)


def degree_operators(H, edge_weight=None) -> DegreeOperators:
    """Node degrees ``sum_e H[v,e] W[e]`` and edge degrees ``sum_v H[v,e]``."""
    E = H.shape[1]
    w = np.ones(E) if edge_weight is None else np.asarray(edge_weight, dtype=np.float64)
    if w.ndim == 2:
        w = np.diag(w).copy()
    dv = np.asarray(H @ w, dtype=np.float64).ravel()
    de = np.asarray(H.sum(axis=0), dtype=np.float64).ravel()
    return DegreeOperators(dv, de, w)


@dataclass(frozen=True)
class TimeSplit:
    """Boundaries for the hidden / known / prediction intervals.

    States are hidden for ``t < tsh``, observed on ``[tsh, ks]`` and the
    forecast target lives in ``(ks, ps]``. Timesteps are indices into a
    hypergraph with ``T`` frames, so the last usable index is ``T - 1``.
    """

    tsh: int
    ks: int
    ps: int

    def validate(self, num_timesteps: int | None = None) -> "TimeSplit":
        last = None if num_timesteps is None else num_timesteps - 1
        ok = 0 <= self.tsh <= self.ks <= self.ps and (last is None or self.ps <= last)
        if not ok:
            bound = "" if last is None else f" (T={last}, the last timestep index)"
            raise ValueError(
                f"invalid time split tsh={self.tsh}, ks={self.ks}, ps={self.ps}: "
                f"require 0 <= tsh <= ks <= ps <= T{bound}"
            )
        return self


class StateSequence:
    """Per-timestep SIR state codes, shape ``(T, N)``.

    Codes are 0/1/2 for S/I/R and -1 for a masked (unobserved) entry, whose
    one-hot row is all zeros.
    """

    def __init__(self, codes):
        codes = np.array(codes, dtype=np.int8, copy=True)
        if codes.ndim != 2:
            raise ValueError(f"state codes must be 2-D (T, N), got shape {codes.shape}")
        if codes.size and (codes.min() < MASKED or codes.max() > RECOVERED):
            raise ValueError("state codes must lie in {-1, 0, 1, 2}")
        codes.setflags(write=False)
        self.codes = codes

    @classmethod
    def from_onehot(cls, X) -> "StateSequence":
        X = np.asarray(X)
        codes = np.where(X.sum(axis=-1) > 0, X.argmax(axis=-1), MASKED)
        return cls(codes)

    @property
    def num_timesteps(self) -> int:
        return self.codes.shape[0]

    @property
    def num_individuals(self) -> int:
        return self.codes.shape[1]

    def onehot(self) -> np.ndarray:
        """``(T, N, 3)`` float array; masked rows are zero."""
        out = np.zeros(self.codes.shape + (3,), dtype=np.float64)
        obs = self.codes >= 0
        t, v = np.nonzero(obs)
        out[t, v, self.codes[obs]] = 1.0
        return out

    def counts(self) -> np.ndarray:
        """``(T, 3)`` counts of S, I, R per timestep (masked entries excluded)."""
        return np.stack([(self.codes == s).sum(axis=1) for s in range(3)], axis=1)

    def __len__(self):
        return self.num_timesteps

    def __eq__(self, other):
        if not isinstance(other, StateSequence):
            return NotImplemented
        return np.array_equal(self.codes, other.codes)

    def __repr__(self):
        return f"StateSequence(T={self.num_timesteps}, N={self.num_individuals})"


def mask_states(X: StateSequence, split: TimeSplit) -> StateSequence:
    """Observable view of ``X``: frames ``[0, ks]`` with ``t < tsh`` masked."""
    if not 0 <= split.tsh <= split.ks < X.num_timesteps:
        raise ValueError(
            f"invalid mask split tsh={split.tsh}, ks={split.ks}: "
            f"require 0 <= tsh <= ks <= {X.num_timesteps - 1}"
        )
    codes = np.array(X.codes[: split.ks + 1])
    codes[: split.tsh] = MASKED
    return StateSequence(codes)


def is_sir_monotone(codes: np.ndarray) -> bool:
    """True if every column follows the pattern S*I*R* over time."""
    codes = np.asarray(codes)
    if codes.shape[0] < 2:
        return True
    return bool(np.all(np.diff(codes.astype(np.int16), axis=0) >= 0))
