"""Losses, optimiser, contact sampling, training loop and grid search."""

from __future__ import annotations

import itertools
import json
import logging
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from ._rng import substream
from .hypergraph import INFECTED, DynamicHypergraph, StateSequence, TimeSplit, mask_states
from .io import json_safe
from .metrics import auroc, mrr
from .model import ModelConfig, Window, backward, forward, init_params

log = logging.getLogger(__name__)

EPS = 1e-12
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
LABEL_MODES = ("any", "at_ps")


# -- losses -------------------------------------------------------------------


def class_weights(labels):
    """Exact ``(w_1, w_0) = (|V| / #positives, |V| / #negatives)``."""
    y = np.asarray(labels).astype(bool)
    n, pos = len(y), int(y.sum())
    if pos == 0 or pos == n:
        raise ValueError("weighted BCE needs at least one positive and one negative label")
    return Fraction(n, pos), Fraction(n, n - pos)


def _bce(probs, labels, w1=1.0, w0=1.0):
    s = np.clip(np.asarray(probs, dtype=np.float64), EPS, 1.0 - EPS)
    y = np.asarray(labels, dtype=np.float64)
    n = len(s)
    loss = -np.sum(w1 * y * np.log(s) + w0 * (1.0 - y) * np.log(1.0 - s)) / n
    grad = -(w1 * y / s - w0 * (1.0 - y) / (1.0 - s)) / n
    return float(loss), grad


def detection_loss(scores, y_detect):
    """Class-weighted BCE over all nodes; returns ``(loss, d loss / d scores)``."""
    w1, w0 = class_weights(y_detect)
    return _bce(scores, y_detect, float(w1), float(w0))


def forecast_loss(probs, y_forecast):
    return _bce(probs, y_forecast)


def pattern_loss(scores, labels):
    if len(scores) == 0:
        raise ValueError("pattern batch is empty")
    return _bce(scores, labels)


def combined_loss(task_loss: float, pattern_loss: float, alpha: float) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha * task_loss + (1.0 - alpha) * pattern_loss


# -- contact sampling ---------------------------------------------------------


def sample_pattern_batch(hg: DynamicHypergraph, t0: int, k: int, ratio: float, rng, num_frames: int | None = None):
    """Positive and negative ``(individual, location)`` pairs at frame ``t0 + k - 1``.

    Positives are every incidence at the target frame; negatives are drawn
    uniformly without replacement from the non-incident pairs, ``ratio``
    per positive. Returns ``(pairs, labels)`` with positives first.
    """
    limit = hg.num_timesteps if num_frames is None else num_frames
    target = t0 + k - 1
    if t0 < 0 or target >= limit:
        raise ValueError(f"target frame {target} outside [0, {limit})")
    N, E = hg.num_individuals, hg.num_locations
    ev = hg.contacts_at(target)
    pos = np.column_stack([ev[:, 1], ev[:, 0]])
    want = int(round(ratio * len(pos)))
    incident = np.zeros(N * E, dtype=bool)
    incident[pos[:, 0] * E + pos[:, 1]] = True
    free = np.flatnonzero(~incident)
    if want > len(free):
        warnings.warn(f"only {len(free)} non-incident pairs available, {want} negatives requested", stacklevel=2)
        want = len(free)
    neg_flat = np.sort(rng.choice(free, size=want, replace=False)) if want else np.zeros(0, dtype=np.int64)
    neg = np.column_stack([neg_flat // E, neg_flat % E])
    pairs = np.concatenate([pos, neg]).astype(np.int64)
    labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    return pairs, labels


# -- optimiser ----------------------------------------------------------------


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def adam_step(params: dict, grads: dict, state: AdamState, lr: float, weight_decay: float = 0.0,
              clip_norm: float | None = None):
    """Clip by global norm, apply decoupled weight decay, then an Adam update.

    Parameters are updated in place; returns ``(params, state)``.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for {name}")
    scale = 1.0
    if clip_norm is not None and clip_norm > 0:
        norm = global_norm(grads)
        if norm > clip_norm:
            scale = clip_norm / norm
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name] * scale
        if weight_decay:
            p -= lr * weight_decay * p
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        m_hat = m / (1.0 - ADAM_BETA1**t)
        v_hat = v / (1.0 - ADAM_BETA2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return params, state


# -- episodes -----------------------------------------------------------------


@dataclass(eq=False)
class Episode:
    """One simulated outbreak: contacts, full state trajectory and sources."""

    hypergraph: DynamicHypergraph
    states: StateSequence
    sources: np.ndarray
    episode_id: int = 0


@dataclass(frozen=True)
class EpisodeSplit:
    train: tuple
    validation: tuple
    test: tuple

    def __post_init__(self):
        sets = [set(self.train), set(self.validation), set(self.test)]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise ValueError("episode splits overlap")
        if not self.validation or not self.test or not self.train:
            raise ValueError("train, validation and test splits must be non-empty")


def split_episodes(ids, seed: int, fractions=(0.70, 0.15, 0.15)) -> EpisodeSplit:
    """Shuffle episode ids and cut them into train/validation/test."""
    ids = list(ids)
    if len(ids) < 3:
        raise ValueError("need at least three episodes to split")
    order = substream(seed, "split").permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n_val = max(1, int(round(fractions[1] * len(ids))))
    n_test = max(1, int(round(fractions[2] * len(ids))))
    n_train = len(ids) - n_val - n_test
    if n_train < 1:
        raise ValueError("not enough episodes for a training split")
    return EpisodeSplit(tuple(shuffled[:n_train]), tuple(shuffled[n_train:n_train + n_val]),
                        tuple(shuffled[n_train + n_val:]))


def forecast_labels(states: StateSequence, split: TimeSplit, label_mode: str = "any") -> np.ndarray:
    """1 if infected at any step in ``(ks, ps]`` (``any``) or exactly at ``ps`` (``at_ps``)."""
    if label_mode not in LABEL_MODES:
        raise ValueError(f"label_mode must be one of {LABEL_MODES}")
    if split.ps <= split.ks:
        raise ValueError("forecasting needs ps > ks")
    horizon = states.codes[split.ks + 1: split.ps + 1]
    if label_mode == "at_ps":
        return (horizon[-1] == INFECTED).astype(np.float64)
    return (horizon == INFECTED).any(axis=0).astype(np.float64)


def detection_labels(episode: Episode) -> np.ndarray:
    y = np.zeros(episode.hypergraph.num_individuals)
    y[np.asarray(episode.sources, dtype=np.int64)] = 1.0
    return y


@dataclass(frozen=True)
class TrainConfig:
    task: str = "forecast"
    tsh: int = 5
    ks: int = 30
    ps: int = 35
    lr: float = 0.01
    weight_decay: float = 1e-4
    clip_norm: float = 5.0
    max_epochs: int = 100
    patience: int = 10
    alpha: float = 0.9
    kernel: int = 3
    hidden: int = 32
    num_layers: int = 2
    neg_ratio: float = 1.0
    label_mode: str = "any"
    seed: int = 0
    grid: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in ("detect", "forecast"):
            raise ValueError(f"task must be 'detect' or 'forecast', got {self.task!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.patience > self.max_epochs:
            raise ValueError("patience must not exceed max_epochs")
        if self.label_mode not in LABEL_MODES:
            raise ValueError(f"label_mode must be one of {LABEL_MODES}")
        TimeSplit(self.tsh, self.ks, self.ps).validate()
        if self.task == "forecast" and self.ps <= self.ks:
            raise ValueError("forecasting needs ps > ks")

    @property
    def split(self) -> TimeSplit:
        return TimeSplit(self.tsh, self.ks, self.ps)

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig(hidden=self.hidden, num_layers=self.num_layers, kernel=self.kernel,
                           mlp_hidden=self.hidden)

    @property
    def uses_pattern(self) -> bool:
        return self.alpha < 1.0

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ValueError(f"unknown train config key(s): {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Sample:
    window: Window
    labels: np.ndarray
    sources: np.ndarray


def prepare_sample(episode: Episode, config: TrainConfig) -> Sample:
    split = config.split.validate(episode.hypergraph.num_timesteps)
    observed = mask_states(episode.states, split)
    window = Window(episode.hypergraph.truncate(split.ks + 1), observed)
    if config.task == "detect":
        labels = detection_labels(episode)
    else:
        labels = forecast_labels(episode.states, split, config.label_mode)
    return Sample(window, labels, np.asarray(episode.sources))


def task_loss(config: TrainConfig, out, labels):
    return detection_loss(out, labels) if config.task == "detect" else forecast_loss(out, labels)


def predict(params: dict, model_config: ModelConfig, sample: Sample, task: str) -> np.ndarray:
    out, _, _ = forward(sample.window, params, model_config, task)
    return out


def evaluate_samples(params, config: TrainConfig, samples) -> dict:
    """Mean task loss and the task metric (MRR or pooled AUROC)."""
    mc = config.model_config
    losses, outs, labels, mrrs = [], [], [], []
    for s in samples:
        out = predict(params, mc, s, config.task)
        try:
            losses.append(task_loss(config, out, s.labels)[0])
        except ValueError:
            pass
        if config.task == "detect":
            mrrs.append(mrr(out, s.sources))
        else:
            outs.append(out)
            labels.append(s.labels)
    loss = float(np.mean(losses)) if losses else float("nan")
    if config.task == "detect":
        metric = float(np.mean(mrrs))
    else:
        y = np.concatenate(labels)
        metric = auroc(np.concatenate(outs), y) if 0 < y.sum() < len(y) else float("nan")
    return {"loss": loss, "metric": metric}


@dataclass
class TrainResult:
    params: dict
    config: TrainConfig
    log: list
    best_epoch: int
    best_val_loss: float
    wall_ms: list

    def log_lines(self) -> str:
        return "".join(json.dumps(json_safe(row), sort_keys=True) + "\n" for row in self.log)


def _train_step(params, sample: Sample, config: TrainConfig, rng, opt: AdamState) -> float:
    mc = config.model_config
    pairs = labels = None
    t0 = None
    if config.uses_pattern:
        T = sample.window.length
        if T < mc.kernel:
            raise ValueError(f"window of {T} frames is shorter than kernel width {mc.kernel}")
        t0 = int(rng.integers(0, T - mc.kernel + 1))
        pairs, labels = sample_pattern_batch(sample.window.hypergraph, t0, mc.kernel, config.neg_ratio, rng,
                                             num_frames=T)
    out, scores, cache = forward(sample.window, params, mc, config.task, pattern_t0=t0, pattern_pairs=pairs)
    l_task, g_task = task_loss(config, out, sample.labels)
    if config.uses_pattern:
        l_pat, g_pat = pattern_loss(scores, labels)
    else:
        l_pat, g_pat = 0.0, None
    loss = combined_loss(l_task, l_pat, config.alpha)
    grads = backward(cache, params, mc, config.alpha * g_task,
                     None if g_pat is None else (1.0 - config.alpha) * g_pat)
    adam_step(params, grads, opt, config.lr, config.weight_decay, config.clip_norm)
    return loss


def train(train_episodes, val_episodes, config: TrainConfig) -> TrainResult:
    """Fit a model with Adam and early stopping on the validation task loss."""
    if not train_episodes or not val_episodes:
        raise ValueError("training and validation episodes must be non-empty")
    train_samples = [prepare_sample(e, config) for e in train_episodes]
    val_samples = [prepare_sample(e, config) for e in val_episodes]
    params = init_params(config.model_config, substream(config.seed, "init_params"))
    opt = AdamState.zeros(params)
    best = {k: v.copy() for k, v in params.items()}
    best_loss, best_epoch, stale = float("inf"), 0, 0
    rows, wall = [], []
    for epoch in range(1, config.max_epochs + 1):
        start = time.perf_counter()
        rng = substream(config.seed, "sampling", epoch)
        losses = []
        for i in rng.permutation(len(train_samples)):
            try:
                losses.append(_train_step(params, train_samples[i], config, rng, opt))
            except NonFiniteGradientError as exc:
                log.warning("epoch %d aborted: %s", epoch, exc)
                break
        val = evaluate_samples(params, config, val_samples)
        rows.append({
            "epoch": epoch,
            "train_loss": float(np.mean(losses)) if losses else float("nan"),
            "val_loss": val["loss"],
            "val_metric": val["metric"],
        })
        wall.append(round((time.perf_counter() - start) * 1000.0, 3))
        if val["loss"] < best_loss:
            best_loss, best_epoch, stale = val["loss"], epoch, 0
            best = {k: v.copy() for k, v in params.items()}
        else:
            stale += 1
            if stale > config.patience:
                break
    return TrainResult(best, config, rows, best_epoch, best_loss, wall)


# -- grid search --------------------------------------------------------------


def expand_grid(base: TrainConfig, axes: dict) -> list:
    """Cartesian product of ``axes`` applied to ``base`` (axis order as given)."""
    names = {f.name for f in fields(TrainConfig)}
    for key, values in axes.items():
        if key not in names:
            raise ValueError(f"unknown grid axis {key!r}")
        if not isinstance(values, (list, tuple)) or len(values) == 0:
            raise ValueError(f"grid axis {key!r} is empty")
    keys = list(axes)
    return [replace(base, **dict(zip(keys, combo))) for combo in itertools.product(*(axes[k] for k in keys))]


def trial_key(config: TrainConfig) -> str:
    d = config.to_dict()
    d.pop("grid", None)
    return json.dumps(d, sort_keys=True)


def _run_trial(args):
    train_eps, val_eps, config = args
    result = train(train_eps, val_eps, config)
    best = result.log[result.best_epoch - 1] if result.best_epoch else {}
    return {
        "key": trial_key(config),
        "config": {k: v for k, v in config.to_dict().items() if k != "grid"},
        "val_loss": result.best_val_loss,
        "val_metric": best.get("val_metric", float("nan")),
        "best_epoch": result.best_epoch,
    }


def _rank_key(trial):
    metric = trial["val_metric"]
    metric = -np.inf if metric is None or np.isnan(metric) else metric
    return (-metric, trial["config"]["hidden"], trial["config"]["lr"])


def _collect(results, done: dict, sink) -> None:
    # record each trial as soon as it finishes so an interrupted search can resume
    for r in results:
        done[r["key"]] = r
        if sink is not None:
            sink.write(json.dumps(json_safe(r), sort_keys=True) + "\n")
            sink.flush()


def grid_search(train_episodes, val_episodes, base: TrainConfig, axes: dict, jobs: int = 1, trials_path=None):
    """Train every grid point; return ``(best_config, trials ranked best-first)``.

    Trials already recorded in ``trials_path`` (JSON lines) are reused, so an
    interrupted search resumes where it stopped.
    """
    configs = expand_grid(base, axes)
    done = {}
    if trials_path is not None and Path(trials_path).exists():
        with open(trials_path) as fh:
            for line in fh:
                if line.strip():
                    t = json.loads(line)
                    t["val_metric"] = float("nan") if t["val_metric"] is None else t["val_metric"]
                    done[t["key"]] = t
    todo = [c for c in configs if trial_key(c) not in done]
    args = [(train_episodes, val_episodes, c) for c in todo]
    sink = open(trials_path, "a") if trials_path is not None else None
    try:
        if jobs > 1 and len(args) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                _collect(pool.map(_run_trial, args), done, sink)
        else:
            _collect(map(_run_trial, args), done, sink)
    finally:
        if sink is not None:
            sink.close()
    trials = sorted((done[trial_key(c)] for c in configs), key=_rank_key)
    best = TrainConfig.from_dict({**trials[0]["config"], "grid": base.grid})
    return best, trials


# -- per-step forecasts -------------------------------------------------------


def train_horizon_models(train_episodes, val_episodes, config: TrainConfig) -> list:
    """One ``at_ps`` forecaster per horizon step ``ks + 1 .. ps``.

    Their outputs give per-timestep infection probabilities, which the
    population curve needs; a single window model only covers the union of
    the horizon.
    """
    if config.task != "forecast":
        raise ValueError("horizon models are forecasters")
    return [train(train_episodes, val_episodes, replace(config, ps=config.ks + h, label_mode="at_ps"))
            for h in range(1, config.ps - config.ks + 1)]


def horizon_probabilities(results, episode: Episode) -> np.ndarray:
    """``(H, N)`` infection probabilities from :func:`train_horizon_models` output."""
    rows = []
    for r in results:
        sample = prepare_sample(episode, r.config)
        rows.append(predict(r.params, r.config.model_config, sample, "forecast"))
    return np.stack(rows)
