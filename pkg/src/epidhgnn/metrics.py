"""Ranking and classification metrics, contact-intensity quantiles and
population-level infection curves."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata


def _rank_positions(scores) -> np.ndarray:
    """1-based rank of every node: descending score, ties by ascending id."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((np.arange(len(scores)), -scores))
    ranks = np.empty(len(scores), dtype=np.int64)
    ranks[order] = np.arange(1, len(scores) + 1)
    return ranks


def _source_ids(sources) -> np.ndarray:
    src = np.unique(np.asarray(sources, dtype=np.int64).ravel())
    if src.size == 0:
        raise ValueError("source set is empty")
    return src


def mrr(scores, sources) -> float:
    """Mean over sources of 1 / rank."""
    src = _source_ids(sources)
    return float(np.mean(1.0 / _rank_positions(scores)[src]))


def hit_at_k(scores, sources, k: int) -> float:
    """Fraction of sources ranked within the top ``k``."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    src = _source_ids(sources)
    return float(np.mean(_rank_positions(scores)[src] <= k))


def f1(probs, labels, threshold: float = 0.5) -> float:
    """F1 of ``probs >= threshold`` against binary labels; 0 if undefined."""
    pred = np.asarray(probs) >= threshold
    y = np.asarray(labels).astype(bool)
    tp = np.sum(pred & y)
    fp = np.sum(pred & ~y)
    fn = np.sum(~pred & y)
    denom = 2 * tp + fp + fn
    return float(2 * tp / denom) if tp > 0 else 0.0


def auroc(probs, labels) -> float:
    """Mann-Whitney estimate of P(positive score > negative score), ties count 1/2."""
    probs = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both positive and negative labels")
    ranks = rankdata(probs)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


# -- contact-intensity quantiles ---------------------------------------------


@dataclass
class QuantileRow:
    quantile: int
    count_range: tuple
    locations: list
    num_pairs: int
    f1: float


@dataclass
class QuantileReport:
    rows: list
    overall_f1: float

    def to_dict(self) -> dict:
        return {
            "quantiles": [
                {
                    "quantile": r.quantile,
                    "range": list(r.count_range) if r.count_range else None,
                    "locations": r.locations,
                    "num_pairs": r.num_pairs,
                    "f1": r.f1,
                }
                for r in self.rows
            ],
            "overall_f1": self.overall_f1,
        }


def contact_quantiles(counts, num_quantiles: int = 4) -> np.ndarray:
    """1-based quantile of each location by contact count.

    Thresholds are the sorted counts at the upper edge of each equal-sized
    block; a location joins the lowest quantile whose threshold it does not
    exceed, so ties at a boundary fall to the lower quantile.
    """
    counts = np.asarray(counts)
    E = len(counts)
    sorted_counts = np.sort(counts)
    thresholds = [sorted_counts[int(np.ceil(q * E / num_quantiles)) - 1] for q in range(1, num_quantiles)]
    quant = np.full(E, num_quantiles, dtype=np.int64)
    for q in reversed(range(num_quantiles - 1)):
        quant[counts <= thresholds[q]] = q + 1
    return quant


def quantile_contact_report(location_counts, scores, labels, pair_locations, threshold: float = 0.5,
                            num_quantiles: int = 4) -> QuantileReport:
    """Per-quantile F1 of contact predictions grouped by location contact intensity."""
    counts = np.asarray(location_counts)
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    pair_locations = np.asarray(pair_locations, dtype=np.int64)
    if len(counts) < num_quantiles:
        warnings.warn(f"only {len(counts)} locations; reporting a single bucket", stacklevel=2)
        quant = np.ones(len(counts), dtype=np.int64)
        n_buckets = 1
    else:
        quant = contact_quantiles(counts, num_quantiles)
        n_buckets = num_quantiles
    rows = []
    for q in range(1, n_buckets + 1):
        locs = np.flatnonzero(quant == q)
        sel = np.isin(pair_locations, locs)
        rng_ = (int(counts[locs].min()), int(counts[locs].max())) if locs.size else None
        rows.append(QuantileRow(q, rng_, locs.tolist(), int(sel.sum()),
                                f1(scores[sel], labels[sel], threshold) if sel.any() else 0.0))
    if any(not r.locations for r in rows):
        warnings.warn("some contact-intensity quantiles are empty (tied counts)", stacklevel=2)
    return QuantileReport(rows, f1(scores, labels, threshold))


# -- population curves --------------------------------------------------------


@dataclass
class PopulationCurve:
    steps: np.ndarray
    predicted: np.ndarray
    true: np.ndarray
    naive: np.ndarray

    @property
    def mae(self) -> float:
        return float(np.mean(np.abs(self.predicted - self.true)))

    @property
    def naive_mae(self) -> float:
        return float(np.mean(np.abs(self.naive - self.true)))

    def rows(self):
        return list(zip(self.steps.tolist(), self.predicted.tolist(), self.true.tolist()))


def population_curve(probs, true_infected, last_observed_count: float, steps=None) -> PopulationCurve:
    """Aggregate per-node infection probabilities into population counts.

    ``probs`` is ``(H, N)`` with one row per horizon step, or ``(N,)`` for a
    single window probability that is then used at every step.
    ``true_infected`` is an ``(H, N)`` boolean array of infected indicators.
    The naive baseline repeats ``last_observed_count``.
    """
    true_infected = np.asarray(true_infected, dtype=bool)
    if true_infected.ndim != 2 or true_infected.shape[0] == 0:
        raise ValueError("true_infected must be a non-empty (H, N) array")
    H = true_infected.shape[0]
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim == 1:
        probs = np.broadcast_to(probs, (H, len(probs)))
    if probs.shape != true_infected.shape:
        raise ValueError(f"probs shape {probs.shape} does not match truth {true_infected.shape}")
    steps = np.arange(H) if steps is None else np.asarray(steps)
    return PopulationCurve(
        steps=steps,
        predicted=probs.sum(axis=1),
        true=true_infected.sum(axis=1).astype(np.float64),
        naive=np.full(H, float(last_observed_count)),
    )


# -- reports ------------------------------------------------------------------


@dataclass
class MetricReport:
    """Per-seed metric values with mean and population standard deviation."""

    task: str
    split: dict
    per_seed: dict = field(default_factory=dict)
    seeds: list = field(default_factory=list)

    def add(self, seed, values: dict) -> None:
        self.seeds.append(seed)
        for name, val in values.items():
            self.per_seed.setdefault(name, []).append(float(val))

    def summary(self) -> dict:
        return {
            name: {"mean": float(np.mean(v)), "std": float(np.std(v)), "per_seed": list(v)}
            for name, v in self.per_seed.items()
        }

    def to_dict(self) -> dict:
        return {"task": self.task, "split": self.split, "seeds": list(self.seeds), "metrics": self.summary()}
