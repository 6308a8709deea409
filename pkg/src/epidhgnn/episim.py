"""Synthetic human-mobility contact generator.

Individuals move hourly between residential, work and commercial locations.
One timestep is one hour from 8:00 to 22:00 inclusive (15 steps per day) and
day 0 is a Monday. All windows are integer hours sampled uniformly and
inclusively, i.e. ``U(a, b)`` draws from ``{a, a+1, ..., b}``.

Location ids are laid out as ``[residential | work | commercial]``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from ._rng import substream
from .hypergraph import DynamicHypergraph

FIRST_HOUR = 8
LAST_HOUR = 22
STEPS_PER_DAY = LAST_HOUR - FIRST_HOUR + 1
WORKDAYS_PER_WEEK = 5


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


def _check_window(cfg, lo: str, hi: str, low=None, high=None):
    a, b = getattr(cfg, lo), getattr(cfg, hi)
    for key, val in ((lo, a), (hi, b)):
        if not isinstance(val, (int, np.integer)) or isinstance(val, bool):
            raise ConfigError(f"{key} must be an integer, got {val!r}")
    if a > b:
        raise ConfigError(f"{lo}={a} exceeds {hi}={b}")
    if low is not None and a < low:
        raise ConfigError(f"{lo}={a} below {low}")
    if high is not None and b > high:
        raise ConfigError(f"{hi}={b} above {high}")


def _check_prob(cfg, key: str):
    p = getattr(cfg, key)
    if not isinstance(p, (int, float)) or isinstance(p, bool) or not 0.0 <= p <= 1.0:
        raise ConfigError(f"{key} must be a probability in [0, 1], got {p!r}")


class _JsonConfig:
    @classmethod
    def from_dict(cls, data: dict):
        names = [f.name for f in fields(cls)]
        unknown = sorted(set(data) - set(names))
        if unknown:
            raise ConfigError(f"unknown key(s): {', '.join(unknown)}")
        missing = [n for n in names if n not in data]
        if missing:
            raise ConfigError(f"missing key(s): {', '.join(missing)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MobilityConfig(_JsonConfig):
    """Hourly movement schedule parameters (hours are integers)."""

    departure_min: int = 9  # T_d ~ U(a, b)
    departure_max: int = 11
    work_hours_min: int = 4  # T_w ~ U(c, d)
    work_hours_max: int = 8
    outing_start_min: int = 10  # weekend T_e ~ U(g, h)
    outing_start_max: int = 14
    outing_prob: float = 0.5  # P_e
    outing_hours_min: int = 1  # weekend T_m ~ U(i, j)
    outing_hours_max: int = 4
    commercial_visit_prob: float = 0.3  # after-work visit on weekdays
    commercial_hours_min: int = 1
    commercial_hours_max: int = 4
    num_residential: int = 6
    num_work: int = 3
    num_commercial: int = 2

    def __post_init__(self):
        span = LAST_HOUR - FIRST_HOUR
        _check_window(self, "departure_min", "departure_max", FIRST_HOUR, LAST_HOUR)
        _check_window(self, "outing_start_min", "outing_start_max", FIRST_HOUR, LAST_HOUR)
        for prefix in ("work_hours", "outing_hours", "commercial_hours"):
            _check_window(self, f"{prefix}_min", f"{prefix}_max", 0, span)
        _check_prob(self, "outing_prob")
        _check_prob(self, "commercial_visit_prob")
        for key in ("num_residential", "num_work", "num_commercial"):
            val = getattr(self, key)
            if not isinstance(val, (int, np.integer)) or val < 1:
                raise ConfigError(f"{key} must be a positive integer, got {val!r}")

    @property
    def num_locations(self) -> int:
        return self.num_residential + self.num_work + self.num_commercial

    @property
    def work_ids(self) -> np.ndarray:
        return np.arange(self.num_residential, self.num_residential + self.num_work)

    @property
    def commercial_ids(self) -> np.ndarray:
        start = self.num_residential + self.num_work
        return np.arange(start, start + self.num_commercial)


@dataclass(frozen=True)
class ContactConfig(_JsonConfig):
    """Acquaintance structure and per-step contact probabilities."""

    home_acquaintances_min: int = 1  # K_r ~ U(m, n)
    home_acquaintances_max: int = 4
    work_acquaintances_min: int = 2  # K_w ~ U(o, p)
    work_acquaintances_max: int = 6
    acquaintance_prob: float = 0.05  # P_a
    stranger_prob: float = 0.01  # P_s

    def __post_init__(self):
        _check_window(self, "home_acquaintances_min", "home_acquaintances_max", 0)
        _check_window(self, "work_acquaintances_min", "work_acquaintances_max", 0)
        _check_prob(self, "acquaintance_prob")
        _check_prob(self, "stranger_prob")


@dataclass(frozen=True, eq=False)
class Population:
    """Fixed home/work assignment and acquaintance sets per individual."""

    home: np.ndarray
    work: np.ndarray
    home_acquaintances: tuple
    work_acquaintances: tuple

    @property
    def size(self) -> int:
        return len(self.home)

    def __eq__(self, other):
        if not isinstance(other, Population):
            return NotImplemented
        return (
            np.array_equal(self.home, other.home)
            and np.array_equal(self.work, other.work)
            and all(np.array_equal(a, b) for a, b in zip(self.home_acquaintances, other.home_acquaintances))
            and all(np.array_equal(a, b) for a, b in zip(self.work_acquaintances, other.work_acquaintances))
        )

    def acquaintance_keys(self) -> np.ndarray:
        """Sorted ``u * N + v`` keys (``u < v``) of acquainted pairs, either direction."""
        N = self.size
        keys = []
        for sets in (self.home_acquaintances, self.work_acquaintances):
            for u, acq in enumerate(sets):
                if len(acq):
                    lo = np.minimum(u, acq)
                    hi = np.maximum(u, acq)
                    keys.append(lo * N + hi)
        if not keys:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate(keys).astype(np.int64))


def _draw_acquaintances(groups, size_lo, size_hi, N, rng, kind):
    out = [np.zeros(0, dtype=np.int64)] * N
    members_by_group = {}
    for v, g in enumerate(groups):
        members_by_group.setdefault(int(g), []).append(v)
    for g in sorted(members_by_group):
        members = np.array(members_by_group[g], dtype=np.int64)
        if size_hi > len(members) - 1 and size_hi > 0:
            raise ConfigError(
                f"{kind} location {g} has {len(members)} member(s) but the acquaintance "
                f"window allows up to {size_hi} acquaintances"
            )
        sizes = rng.integers(size_lo, size_hi + 1, size=len(members))
        for v, k in zip(members, sizes):
            others = members[members != v]
            out[v] = np.sort(rng.choice(others, size=int(k), replace=False)) if k else np.zeros(0, dtype=np.int64)
    return tuple(out)


def generate_population(mobility: MobilityConfig, contact: ContactConfig, N: int, seed: int) -> Population:
    """Assign homes/workplaces uniformly and draw acquaintance sets."""
    if N <= 0:
        raise ConfigError(f"N must be positive, got {N}")
    rng = substream(seed, "population")
    home = rng.integers(0, mobility.num_residential, size=N)
    work = mobility.work_ids[rng.integers(0, mobility.num_work, size=N)]
    home_acq = _draw_acquaintances(
        home, contact.home_acquaintances_min, contact.home_acquaintances_max, N, rng, "residential"
    )
    work_acq = _draw_acquaintances(
        work, contact.work_acquaintances_min, contact.work_acquaintances_max, N, rng, "work"
    )
    return Population(home, work, home_acq, work_acq)


def timestep_calendar(t):
    """``(day, hour, is_weekend)`` for timestep index ``t``."""
    t = np.asarray(t)
    day = t // STEPS_PER_DAY
    hour = FIRST_HOUR + t % STEPS_PER_DAY
    return day, hour, (day % 7) >= WORKDAYS_PER_WEEK


def _day_schedule(pop: Population, cfg: MobilityConfig, weekend: bool, rng) -> np.ndarray:
    N = pop.size
    hours = np.arange(FIRST_HOUR, LAST_HOUR + 1)[:, None]
    loc = np.broadcast_to(pop.home, (STEPS_PER_DAY, N)).copy()
    if weekend:
        goes = rng.random(N) < cfg.outing_prob
        start = rng.integers(cfg.outing_start_min, cfg.outing_start_max + 1, size=N)
        stay = rng.integers(cfg.outing_hours_min, cfg.outing_hours_max + 1, size=N)
        shop = cfg.commercial_ids[rng.integers(0, cfg.num_commercial, size=N)]
        out = goes & (hours >= start) & (hours < start + stay)
        loc = np.where(out, shop, loc)
        return loc
    depart = rng.integers(cfg.departure_min, cfg.departure_max + 1, size=N)
    work_for = rng.integers(cfg.work_hours_min, cfg.work_hours_max + 1, size=N)
    visits = rng.random(N) < cfg.commercial_visit_prob
    shop_for = rng.integers(cfg.commercial_hours_min, cfg.commercial_hours_max + 1, size=N)
    shop = cfg.commercial_ids[rng.integers(0, cfg.num_commercial, size=N)]
    leave = depart + work_for
    at_work = (hours >= depart) & (hours < leave)
    at_shop = visits & (hours >= leave) & (hours < leave + shop_for)
    loc = np.where(at_work, pop.work, loc)
    loc = np.where(at_shop, shop, loc)
    return loc


def simulate_mobility(pop: Population, mobility: MobilityConfig, num_days: int, seed: int) -> DynamicHypergraph:
    """Hourly location of every individual over ``num_days`` days."""
    if num_days < 1:
        raise ConfigError(f"num_days must be at least 1, got {num_days}")
    rng = substream(seed, "mobility")
    frames = []
    for day in range(num_days):
        weekend = (day % 7) >= WORKDAYS_PER_WEEK
        frames.append(_day_schedule(pop, mobility, weekend, rng))
    return DynamicHypergraph.from_location_matrix(np.concatenate(frames, axis=0), mobility.num_locations)


def location_matrix(hg: DynamicHypergraph) -> np.ndarray:
    """``(T, N)`` location per individual; requires exactly one location per timestep."""
    T, N = hg.num_timesteps, hg.num_individuals
    if len(hg.contacts) != T * N:
        raise ValueError("hypergraph is not a per-timestep partition of individuals")
    loc = np.full((T, N), -1, dtype=np.int64)
    loc[hg.contacts[:, 0], hg.contacts[:, 2]] = hg.contacts[:, 1]
    if (loc < 0).any():
        raise ValueError("hypergraph is not a per-timestep partition of individuals")
    return loc


def colocated_pairs(members_by_location) -> np.ndarray:
    """All unordered ``(u, v)`` pairs, ``u < v``, sharing a location."""
    chunks = []
    for members in members_by_location:
        m = np.sort(np.asarray(members, dtype=np.int64))
        if len(m) < 2:
            continue
        i, j = np.triu_indices(len(m), k=1)
        chunks.append(np.column_stack([m[i], m[j]]))
    if not chunks:
        return np.zeros((0, 2), dtype=np.int64)
    return np.concatenate(chunks)


def stranger_contact_mask(hg: DynamicHypergraph, pop: Population, contact: ContactConfig, t: int, seed: int,
                          acquaintance_keys: np.ndarray | None = None) -> set:
    """Co-located pairs at ``t`` flagged as infection-relevant.

    Each pair is kept independently with probability ``acquaintance_prob`` if
    the two individuals are acquainted, else ``stranger_prob``.
    """
    pairs = _colocated_at(hg, t)
    keep = _sample_contact_pairs(pairs, pop, contact, substream(seed, "contact", t), acquaintance_keys)
    return {(int(u), int(v)) for u, v in keep}


def _colocated_at(hg: DynamicHypergraph, t: int) -> np.ndarray:
    ev = hg.contacts_at(t)
    if len(ev) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    bounds = np.flatnonzero(np.diff(ev[:, 0])) + 1
    return colocated_pairs(np.split(ev[:, 1], bounds))


def _sample_contact_pairs(pairs, pop, contact, rng, acquaintance_keys=None) -> np.ndarray:
    if len(pairs) == 0:
        return pairs
    if acquaintance_keys is None:
        acquaintance_keys = pop.acquaintance_keys()
    keys = pairs[:, 0] * pop.size + pairs[:, 1]
    acquainted = np.isin(keys, acquaintance_keys, assume_unique=False)
    p = np.where(acquainted, contact.acquaintance_prob, contact.stranger_prob)
    return pairs[rng.random(len(pairs)) < p]

