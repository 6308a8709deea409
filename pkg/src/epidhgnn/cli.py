"""Command-line pipeline: simulate, infect, train, eval, gridsearch.

Stages hand off through files. A data directory is either a single episode
(``contacts.csv`` at its root) or a collection of episode subdirectories
(``ep000``, ``ep001``, ...). Every run writes ``manifest.json`` into its
output directory last, atomically.

Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from ._rng import substream
from .episim import ConfigError, ContactConfig, MobilityConfig, generate_population, simulate_mobility
from .hypergraph import INFECTED
from .io import (
    DatasetFormatError,
    load_contacts,
    load_population,
    load_states,
    save_contacts,
    save_population,
    save_states,
    write_json,
    write_text_atomic,
)
from .metrics import MetricReport, auroc, f1, hit_at_k, mrr, population_curve, quantile_contact_report
from .model import CheckpointError, forward, load_checkpoint, save_checkpoint
from .presets import episim_like
from .sir import PathogenParams, run_sir
from .training import (
    Episode,
    TrainConfig,
    expand_grid,
    grid_search,
    prepare_sample,
    sample_pattern_batch,
    split_episodes,
    train,
)


class UsageError(Exception):
    """Bad flags, configs or inputs; maps to exit code 2."""


_USAGE_ERRORS = (ConfigError, CheckpointError, DatasetFormatError, FileNotFoundError, json.JSONDecodeError,
                 ValueError, KeyError, TypeError)


def _usage(fn, *args, **kwargs):
    """Run a setup step, turning validation failures into :class:`UsageError`."""
    try:
        return fn(*args, **kwargs)
    except _USAGE_ERRORS as exc:
        raise UsageError(str(exc) if not isinstance(exc, KeyError) else f"missing key {exc}") from exc


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    seed: int | None
    inputs: dict
    outputs: list
    version: str = __version__
    started_at: str = ""
    finished_at: str = ""
    wall_seconds: float = 0.0
    extra: dict = field(default_factory=dict)


class _Run:
    def __init__(self, subcommand: str):
        self.subcommand = subcommand
        self.started = datetime.now(timezone.utc)
        self.t0 = time.perf_counter()

    def finish(self, out_dir: Path, manifest: RunManifest) -> None:
        manifest.started_at = self.started.isoformat()
        manifest.finished_at = datetime.now(timezone.utc).isoformat()
        manifest.wall_seconds = round(time.perf_counter() - self.t0, 3)
        write_json(out_dir / "manifest.json", asdict(manifest))


# -- data directories ---------------------------------------------------------


def episode_dirs(data: Path) -> list:
    data = Path(data)
    if (data / "contacts.csv").exists():
        return [data]
    dirs = sorted(p for p in data.iterdir() if p.is_dir() and (p / "contacts.csv").exists()) if data.is_dir() else []
    if not dirs:
        raise FileNotFoundError(f"no contacts.csv under {data}")
    return dirs


def _read_sources(path: Path) -> np.ndarray:
    with open(path) as fh:
        return np.asarray(json.load(fh), dtype=np.int64)


def load_episodes(data: Path) -> list:
    episodes = []
    for i, d in enumerate(episode_dirs(data)):
        for name in ("states.csv", "sources.json"):
            if not (d / name).exists():
                raise FileNotFoundError(f"{d / name} not found; run `epidhgnn infect` first")
        hg = load_contacts(d / "contacts.csv")
        states = load_states(d / "states.csv", hg.num_individuals)
        episodes.append(Episode(hg, states, _read_sources(d / "sources.json"), i))
    return episodes


def _episode_seed(seed: int, index: int) -> int:
    return seed * 1000 + index


def _read_json(path) -> dict:
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return data


def _load_pathogen(data: Path):
    if not (data / "pathogen.json").exists():
        raise FileNotFoundError(f"{data / 'pathogen.json'} not found; run `epidhgnn infect` first")
    return PathogenParams.from_json(data / "pathogen.json")


def _infect_episode(d: Path, params: PathogenParams, contact: ContactConfig | None, seed: int):
    hg = load_contacts(d / "contacts.csv")
    pop = load_population(d / "population.json") if params.mode == "pairwise" else None
    states, sources = run_sir(hg, params, seed, population=pop, contact=contact)
    return hg, states, sources


# -- subcommands --------------------------------------------------------------


def cmd_simulate(args) -> int:
    run = _Run("simulate")
    preset = episim_like()
    mobility = _usage(MobilityConfig.from_json, args.mobility) if args.mobility else preset.mobility
    contact = _usage(ContactConfig.from_json, args.contact) if args.contact else preset.contact
    if args.days < 1 or args.individuals < 1 or args.episodes < 1:
        raise UsageError("--days, --individuals and --episodes must be positive")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for i in range(args.episodes):
        d = out if args.episodes == 1 else out / f"ep{i:03d}"
        d.mkdir(exist_ok=True)
        seed = _episode_seed(args.seed, i)
        pop = _usage(generate_population, mobility, contact, args.individuals, seed)
        hg = simulate_mobility(pop, mobility, args.days, seed)
        save_contacts(hg, d / "contacts.csv")
        save_population(pop, d / "population.json")
        outputs += [str(d / "contacts.csv"), str(d / "meta.json"), str(d / "population.json")]
    write_json(out / "mobility.json", mobility.to_dict())
    write_json(out / "contact.json", contact.to_dict())
    outputs += [str(out / "mobility.json"), str(out / "contact.json")]
    config = {"mobility": mobility.to_dict(), "contact": contact.to_dict(), "days": args.days,
              "individuals": args.individuals, "episodes": args.episodes}
    run.finish(out, RunManifest("simulate", config, args.seed,
                                {"mobility": args.mobility, "contact": args.contact}, outputs))
    return 0


def cmd_infect(args) -> int:
    run = _Run("infect")
    data = Path(args.data)
    dirs = _usage(episode_dirs, data)
    if args.pathogen:
        params, file_seed = _usage(PathogenParams.from_json, args.pathogen)
    else:
        params, file_seed = episim_like().pathogen, 0
    seed = args.seed if args.seed is not None else file_seed
    if not isinstance(seed, int):
        raise UsageError(f"seed must be an integer, got {seed!r}")
    contact = None
    if params.mode == "pairwise":
        contact = _usage(ContactConfig.from_json, data / "contact.json")
    outputs = []
    for i, d in enumerate(dirs):
        hg, states, sources = _usage(_infect_episode, d, params, contact, _episode_seed(seed, i))
        save_states(states, d / "states.csv")
        write_text_atomic(d / "sources.json", json.dumps(sources.tolist()) + "\n")
        outputs += [str(d / "states.csv"), str(d / "sources.json")]
    write_json(data / "pathogen.json", {**params.to_dict(), "seed": seed})
    outputs.append(str(data / "pathogen.json"))
    parent = _read_json(data / "manifest.json") if (data / "manifest.json").exists() else None
    run.finish(data, RunManifest("infect", params.to_dict(), seed, {"data": str(data), "pathogen": args.pathogen},
                                 outputs, extra={"parent": parent}))
    return 0


def _train_config(args, overrides: dict) -> TrainConfig:
    base = _read_json(args.config) if args.config else {}
    base.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(base)


def _check_split(config: TrainConfig, episodes) -> None:
    T = min(e.states.num_timesteps for e in episodes)
    config.split.validate(T)


def cmd_train(args) -> int:
    run = _Run("train")
    data = Path(args.data)
    config = _usage(_train_config, args, dict(task=args.task, tsh=args.tsh, ks=args.ks, ps=args.ps, seed=args.seed))
    episodes = _usage(load_episodes, data)
    _usage(_check_split, config, episodes)
    split = _usage(split_episodes, range(len(episodes)), config.seed)
    names = [d.name for d in episode_dirs(data)]
    result = train([episodes[i] for i in split.train], [episodes[i] for i in split.validation], config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    extra = {
        "train_config": config.to_dict(),
        "best_epoch": result.best_epoch,
        "data": str(data.resolve()),
        "train_episodes": [names[i] for i in split.train],
        "val_episodes": [names[i] for i in split.validation],
        "test_episodes": [names[i] for i in split.test],
    }
    save_checkpoint(out / "checkpoint.npz", result.params, config.model_config, extra)
    write_text_atomic(out / "train_log.jsonl", result.log_lines())
    run.finish(out, RunManifest(
        "train", config.to_dict(), config.seed, {"data": str(data), "config": args.config},
        [str(out / "checkpoint.npz"), str(out / "train_log.jsonl")],
        extra={"best_epoch": result.best_epoch, "best_val_loss": result.best_val_loss,
               "wall_ms": result.wall_ms,
               "split": {k: extra[k] for k in ("train_episodes", "val_episodes", "test_episodes")}},
    ))
    return 0


def _parse_seeds(text):
    if text is None:
        return None
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--seeds must be comma-separated integers, got {text!r}") from None
    if not seeds:
        raise UsageError("--seeds is empty")
    return seeds


def _eval_episodes(data: Path, extra: dict):
    """Episodes of ``data`` the checkpoint did not train or validate on."""
    dirs = episode_dirs(data)
    used = set()
    if extra.get("data") == str(data.resolve()):
        used = set(extra.get("train_episodes", [])) | set(extra.get("val_episodes", []))
    keep = [i for i, d in enumerate(dirs) if d.name not in used]
    if not keep:
        raise ValueError(f"every episode in {data} was used to train this checkpoint")
    return [dirs[i] for i in keep], keep


def _evaluate_seed(episodes, params, model_config, config: TrainConfig, label):
    """Task metrics, aggregated population curve and pattern report for one outbreak seed."""
    k = model_config.kernel
    split = config.split
    values = {}
    scores_all, labels_all, counts_all, locs_all = [], [], [], []
    probs_all, y_all = [], []
    curve = None
    for j, ep in enumerate(episodes):
        sample = prepare_sample(ep, config)
        t0 = split.ks - k + 1
        rng = substream(label, "sampling", ep.episode_id)
        pairs, plabels = sample_pattern_batch(ep.hypergraph, t0, k, config.neg_ratio, rng, num_frames=split.ks + 1)
        out, scores, _ = forward(sample.window, params, model_config, config.task, pattern_t0=t0, pattern_pairs=pairs)
        E = ep.hypergraph.num_locations
        scores_all.append(scores)
        labels_all.append(plabels)
        counts_all.append(ep.hypergraph.location_contact_counts(split.ks + 1))
        locs_all.append(pairs[:, 1] + j * E)
        if config.task == "detect":
            for name, fn in (("mrr", mrr), ("hit@1", lambda s, y: hit_at_k(s, y, 1)),
                             ("hit@3", lambda s, y: hit_at_k(s, y, 3))):
                values.setdefault(name, []).append(fn(out, ep.sources))
        else:
            probs_all.append(out)
            y_all.append(sample.labels)
            truth = ep.states.codes[split.ks + 1: split.ps + 1] == INFECTED
            last = int(np.sum(ep.states.codes[split.ks] == INFECTED))
            c = population_curve(out, truth, last, steps=np.arange(split.ks + 1, split.ps + 1))
            if curve is None:
                curve = c
            else:
                curve.predicted = curve.predicted + c.predicted
                curve.true = curve.true + c.true
                curve.naive = curve.naive + c.naive
    metrics = {name: float(np.mean(v)) for name, v in values.items()}
    if config.task == "forecast":
        probs, y = np.concatenate(probs_all), np.concatenate(y_all)
        metrics["auroc"] = auroc(probs, y) if 0 < y.sum() < len(y) else float("nan")
        metrics["f1"] = f1(probs, y)
        metrics["curve_mae"] = curve.mae
        metrics["naive_mae"] = curve.naive_mae
    report = quantile_contact_report(np.concatenate(counts_all), np.concatenate(scores_all),
                                     np.concatenate(labels_all), np.concatenate(locs_all))
    metrics["pattern_f1"] = report.overall_f1
    return metrics, curve, report


def cmd_eval(args) -> int:
    run = _Run("eval")
    data = Path(args.data)
    params, model_config, extra = _usage(load_checkpoint, args.checkpoint)
    if model_config.in_dim != 3:
        raise UsageError(f"checkpoint expects {model_config.in_dim} state channels, data has 3")
    config = _usage(TrainConfig.from_dict, extra.get("train_config", {}))
    task = args.task or config.task
    if task != config.task:
        raise UsageError(f"checkpoint was trained for {config.task!r}, not {task!r}")
    seeds = _parse_seeds(args.seeds)
    dirs, idx = _usage(_eval_episodes, data, extra)
    stored = []
    for i, d in zip(idx, dirs):
        hg = _usage(load_contacts, d / "contacts.csv")
        _usage(config.split.validate, hg.num_timesteps)
        stored.append((i, d, hg))

    runs = []
    if seeds is None:
        episodes = _usage(load_episodes, data)
        runs.append(("stored", [episodes[i] for i in idx]))
    else:
        params_p, _ = _usage(_load_pathogen, data)
        contact = _usage(ContactConfig.from_json, data / "contact.json") if params_p.mode == "pairwise" else None
        for s in seeds:
            eps = []
            for i, d, hg in stored:
                _, states, sources = _infect_episode(d, params_p, contact, _episode_seed(s, i))
                eps.append(Episode(hg, states, sources, i))
            runs.append((s, eps))

    report = MetricReport(task, asdict(config.split))
    curves, quantiles = [], {}
    for label, eps in runs:
        seed_val = 0 if label == "stored" else label
        metrics, curve, qrep = _evaluate_seed(eps, params, model_config, config, seed_val)
        report.add(label, metrics)
        quantiles[str(label)] = qrep.to_dict()
        if curve is not None:
            curves.append(curve)

    out = Path(args.out) if args.out else Path(args.checkpoint).resolve().parent
    out.mkdir(parents=True, exist_ok=True)
    outputs = [str(out / "metrics.json"), str(out / "quantiles.json")]
    write_json(out / "metrics.json", {**report.to_dict(), "episodes": [d.name for d in dirs]})
    write_json(out / "quantiles.json", quantiles)
    if curves:
        pred = np.mean([c.predicted for c in curves], axis=0)
        true = np.mean([c.true for c in curves], axis=0)
        lines = ["t,infected_pred,infected_true"]
        lines += [f"{t},{p:.6f},{y:.6f}" for t, p, y in zip(curves[0].steps.tolist(), pred.tolist(), true.tolist())]
        write_text_atomic(out / "curve.csv", "\n".join(lines) + "\n")
        outputs.append(str(out / "curve.csv"))
    run.finish(out, RunManifest("eval", config.to_dict(), None,
                                {"data": str(data), "checkpoint": args.checkpoint, "seeds": seeds}, outputs))
    return 0


def cmd_gridsearch(args) -> int:
    run = _Run("gridsearch")
    data = Path(args.data)
    base = _usage(_train_config, args, {})
    axes = _usage(_read_json, args.axes)
    _usage(expand_grid, base, axes)
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    episodes = _usage(load_episodes, data)
    for cfg in expand_grid(base, axes):
        _usage(_check_split, cfg, episodes)
    split = _usage(split_episodes, range(len(episodes)), base.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    best, trials = grid_search([episodes[i] for i in split.train], [episodes[i] for i in split.validation],
                               replace(base, grid=axes), axes, jobs=args.jobs, trials_path=out / "trials.jsonl")
    write_json(out / "ranking.json", [{"rank": r + 1, **{k: v for k, v in t.items() if k != "key"}}
                                      for r, t in enumerate(trials)])
    write_json(out / "best_config.json", {k: v for k, v in best.to_dict().items() if k != "grid"})
    run.finish(out, RunManifest("gridsearch", {"base": base.to_dict(), "axes": axes}, base.seed,
                                {"data": str(data), "axes": args.axes, "config": args.config},
                                [str(out / n) for n in ("trials.jsonl", "ranking.json", "best_config.json")],
                                extra={"num_trials": len(trials)}))
    return 0


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epidhgnn", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate mobility contacts")
    p.add_argument("--mobility", help="mobility.json (default: episim-like preset)")
    p.add_argument("--contact", help="contact.json (default: episim-like preset)")
    p.add_argument("--days", type=int, default=14)
    p.add_argument("--individuals", type=int, default=1000)
    p.add_argument("--episodes", type=int, default=1, help="independent episodes, written to epNNN/ when > 1")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("infect", help="run SIR outbreaks on simulated contacts")
    p.add_argument("--data", required=True)
    p.add_argument("--pathogen", help="pathogen.json (default: episim-like preset)")
    p.add_argument("--seed", type=int, help="overrides the seed in pathogen.json")
    p.set_defaults(func=cmd_infect)

    p = sub.add_parser("train", help="train a detection or forecasting model")
    p.add_argument("--data", required=True)
    p.add_argument("--task", choices=("detect", "forecast"))
    p.add_argument("--tsh", type=int)
    p.add_argument("--ks", type=int)
    p.add_argument("--ps", type=int)
    p.add_argument("--config", help="train_config.json; flags override its values")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", choices=("detect", "forecast"))
    p.add_argument("--seeds", help="comma-separated outbreak seeds; default uses the stored states")
    p.add_argument("--out", help="output directory (default: the checkpoint's directory)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gridsearch", help="exhaustive hyperparameter search")
    p.add_argument("--data", required=True)
    p.add_argument("--axes", required=True, help='JSON object such as {"hidden": [16, 32]}')
    p.add_argument("--config", help="base train_config.json")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_gridsearch)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"epidhgnn {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report any runtime failure as exit 1
        print(f"epidhgnn {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
