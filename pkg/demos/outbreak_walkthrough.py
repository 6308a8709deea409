"""Walk through one synthetic outbreak: contacts, SIR spread, a small model.

Run with ``python3 demos/outbreak_walkthrough.py``. Takes a few seconds.
"""

import numpy as np

from epidhgnn.hypergraph import INFECTED
from epidhgnn.presets import episim_like, generate_episodes
from epidhgnn.training import TrainConfig, evaluate_samples, prepare_sample, train


def describe(ep):
    hg, counts = ep.hypergraph, ep.states.counts()
    print(f"  {hg.num_individuals} people, {hg.num_locations} locations, {hg.num_timesteps} timesteps, "
          f"{len(hg.contacts)} contacts")
    print(f"  sources {ep.sources.tolist()}, S/I/R at the end {counts[-1].tolist()}")


scenario = episim_like(num_individuals=300)
episodes = generate_episodes(scenario, 12, base_seed=7, num_timesteps=36)
print("episode 0")
describe(episodes[0])
train_eps, val_eps, test_eps = episodes[:8], episodes[8:10], episodes[10:]

# forecasting: who is infected in the five steps after ks?
cfg = TrainConfig(task="forecast", tsh=5, ks=30, ps=35, hidden=16, max_epochs=30, patience=5, seed=7)
result = train(train_eps, val_eps, cfg)
print(f"\nforecast: {len(result.log)} epochs, best epoch {result.best_epoch}")
for ep in test_eps:
    sample = prepare_sample(ep, cfg)
    m = evaluate_samples(result.params, cfg, [sample])["metric"]
    print(f"  test episode {ep.episode_id}: AUROC {m:.3f}")
    truth = ep.states.codes[cfg.ks + 1: cfg.ps + 1] == INFECTED
    last = int(np.sum(ep.states.codes[cfg.ks] == INFECTED))
    print(f"    infected at ks: {last}, at ps: {int(truth[-1].sum())}")

# detection: rank everyone by how likely they were the source
cfg = TrainConfig(task="detect", tsh=5, ks=20, ps=20, hidden=16, max_epochs=30, patience=5, seed=7)
result = train(train_eps, val_eps, cfg)
uniform = sum(1 / r for r in range(1, 301)) / 300
print(f"\ndetection: {len(result.log)} epochs, best epoch {result.best_epoch}")
for ep in test_eps:
    m = evaluate_samples(result.params, cfg, [prepare_sample(ep, cfg)])["metric"]
    print(f"  test episode {ep.episode_id}: MRR {m:.3f} (uniform ranking {uniform:.3f})")
