"""Stochastic SIR propagation on dynamic hypergraphs.

In hyperedge mode the infected members of each location exert a pressure
``f(I_e) = 1 - (1 - beta) ** (I_e ** nu)`` and a susceptible individual is
infected with probability ``1 - prod_{e ∋ v} (1 - f(I_e))``. With ``nu == 1``
this is independent per-contact transmission; ``nu != 1`` amplifies or
saturates crowded locations. Pairwise mode restricts transmission to sampled
contact pairs (see :func:`epidhgnn.episim.stranger_contact_mask`), each
infected partner transmitting with probability ``beta``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from ._rng import substream
from .episim import ConfigError, ContactConfig, Population, _colocated_at, _sample_contact_pairs
from .hypergraph import INFECTED, RECOVERED, SUSCEPTIBLE, DynamicHypergraph, StateSequence

MODES = ("hyperedge", "pairwise")


@dataclass(frozen=True)
class PathogenParams:
    beta: float = 0.05
    gamma: float = 0.1
    nu: float = 1.0
    num_sources: int = 1
    mode: str = "hyperedge"

    def __post_init__(self):
        for key in ("beta", "gamma"):
            val = getattr(self, key)
            if not isinstance(val, (int, float)) or isinstance(val, bool) or not 0.0 <= val <= 1.0:
                raise ConfigError(f"{key} must be a probability in [0, 1], got {val!r}")
        if not isinstance(self.nu, (int, float)) or not self.nu > 0:
            raise ConfigError(f"nu must be positive, got {self.nu!r}")
        if not isinstance(self.num_sources, int) or self.num_sources < 1:
            raise ConfigError(f"num_sources must be a positive integer, got {self.num_sources!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")

    @classmethod
    def from_json(cls, path):
        """Load ``pathogen.json``; returns ``(params, seed)``."""
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        keys = {"beta", "gamma", "nu", "num_sources", "mode", "seed"}
        unknown = sorted(set(data) - keys)
        if unknown:
            raise ConfigError(f"unknown key(s): {', '.join(unknown)}")
        missing = sorted(keys - set(data))
        if missing:
            raise ConfigError(f"missing key(s): {', '.join(missing)}")
        seed = data.pop("seed")
        return cls(**data), seed

    def to_dict(self) -> dict:
        return asdict(self)


def seed_infection(N: int, num_sources: int, seed: int):
    """Initial state codes ``(N,)`` and the sorted source ids."""
    if not 1 <= num_sources <= N:
        raise ValueError(f"num_sources must be in [1, {N}], got {num_sources}")
    rng = substream(seed, "init")
    sources = np.sort(rng.choice(N, size=num_sources, replace=False))
    x0 = np.full(N, SUSCEPTIBLE, dtype=np.int8)
    x0[sources] = INFECTED
    return x0, sources


def _as_codes(X) -> np.ndarray:
    X = np.asarray(X)
    if X.ndim == 2:
        if X.shape[1] != 3 or not np.all(X.sum(axis=1) == 1):
            raise ValueError("state matrix must be one-hot with 3 columns")
        return X.argmax(axis=1).astype(np.int8)
    return X.astype(np.int8)


def edge_pressure(infected_counts, beta: float, nu: float) -> np.ndarray:
    """``f(I_e) = 1 - (1 - beta) ** (I_e ** nu)``."""
    return 1.0 - (1.0 - beta) ** (np.asarray(infected_counts, dtype=np.float64) ** nu)


def expected_infection_prob(H, X, params: PathogenParams, contact_pairs=None) -> np.ndarray:
    """Per-node probability of becoming infected in the next step.

    Non-susceptible nodes get probability 0. ``H`` is ``N x E``; ``X`` is
    either one-hot ``N x 3`` or a code vector. Pairwise mode needs
    ``contact_pairs``, an ``(M, 2)`` array of transmission-eligible pairs.
    """
    codes = _as_codes(X)
    N = H.shape[0]
    if len(codes) != N:
        raise ValueError(f"state has {len(codes)} rows but incidence has {N}")
    infected = (codes == INFECTED).astype(np.float64)
    susceptible = codes == SUSCEPTIBLE
    if params.mode == "pairwise":
        pairs = np.zeros((0, 2), dtype=np.int64) if contact_pairs is None else np.asarray(contact_pairs)
        n_inf = np.zeros(N)
        if len(pairs):
            np.add.at(n_inf, pairs[:, 0], infected[pairs[:, 1]])
            np.add.at(n_inf, pairs[:, 1], infected[pairs[:, 0]])
        with np.errstate(divide="ignore"):
            log_escape = n_inf * np.log1p(-params.beta) if params.beta < 1 else np.where(n_inf > 0, -np.inf, 0.0)
    else:
        I_e = np.asarray(H.T @ infected).ravel()
        escape = 1.0 - edge_pressure(I_e, params.beta, params.nu)
        with np.errstate(divide="ignore"):
            log_q = np.log(escape)
        # sparse products skip structural zeros, so -inf never meets a 0 entry
        log_escape = np.asarray(H @ log_q).ravel()
    p = -np.expm1(log_escape)
    return np.where(susceptible, p, 0.0)


def step_sir(H, X, params: PathogenParams, rng, contact_pairs=None) -> np.ndarray:
    """One synchronous SIR update; returns the next state codes."""
    codes = _as_codes(X)
    if H.shape[0] != len(codes):
        raise ValueError(f"incidence has {H.shape[0]} rows but state has {len(codes)}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    p_inf = expected_infection_prob(H, codes, params, contact_pairs)
    u = rng.random(len(codes))
    u_rec = rng.random(len(codes))
    nxt = codes.copy()
    nxt[(codes == SUSCEPTIBLE) & (u < p_inf)] = INFECTED
    nxt[(codes == INFECTED) & (u_rec < params.gamma)] = RECOVERED
    return nxt


def run_sir(hg: DynamicHypergraph, params: PathogenParams, seed: int, num_timesteps: int | None = None,
            population: Population | None = None, contact: ContactConfig | None = None):
    """Simulate a full trajectory; returns ``(StateSequence, sources)``."""
    T = hg.num_timesteps if num_timesteps is None else num_timesteps
    if not 1 <= T <= hg.num_timesteps:
        raise ValueError(f"num_timesteps must be in [1, {hg.num_timesteps}], got {T}")
    if params.mode == "pairwise" and (population is None or contact is None):
        raise ValueError("pairwise mode requires a population and contact config")
    N = hg.num_individuals
    x0, sources = seed_infection(N, params.num_sources, seed)
    codes = np.empty((T, N), dtype=np.int8)
    codes[0] = x0
    rng = substream(seed, "pathogen")
    acq = population.acquaintance_keys() if params.mode == "pairwise" else None
    for t in range(T - 1):
        pairs = None
        if params.mode == "pairwise":
            pairs = _sample_contact_pairs(_colocated_at(hg, t), population, contact,
                                          substream(seed, "contact", t), acq)
        codes[t + 1] = step_sir(hg.incidence(t), codes[t], params, rng, pairs)
    return StateSequence(codes), sources
