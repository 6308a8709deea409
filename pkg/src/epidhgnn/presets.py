"""Ready-made synthetic scenarios and episode generation.

The ``episim_like`` preset is an 11-location town (6 residential, 3 work,
2 commercial). Its numbers are illustrative defaults chosen so that outbreaks
grow over the first days; they are not calibrated to any pathogen.
"""

from __future__ import annotations

from dataclasses import dataclass

from .episim import ContactConfig, MobilityConfig, generate_population, simulate_mobility
from .sir import PathogenParams, run_sir
from .training import Episode


@dataclass(frozen=True)
class Scenario:
    mobility: MobilityConfig
    contact: ContactConfig
    pathogen: PathogenParams
    num_individuals: int
    num_days: int


def episim_like(num_individuals: int = 1000, num_days: int = 14) -> Scenario:
    return Scenario(
        mobility=MobilityConfig(),
        contact=ContactConfig(),
        pathogen=PathogenParams(beta=0.002, gamma=0.05, nu=1.0, num_sources=1, mode="hyperedge"),
        num_individuals=num_individuals,
        num_days=num_days,
    )


def episim_like_full() -> Scenario:
    """Town-scale variant with 10,000 individuals."""
    return episim_like(num_individuals=10_000)


def generate_episode(scenario: Scenario, seed: int, episode_id: int = 0, num_timesteps: int | None = None) -> Episode:
    """Population, mobility and outbreak for one seed.

    ``num_timesteps`` truncates the contact data, which saves work when only
    the first part of the outbreak is used.
    """
    pop = generate_population(scenario.mobility, scenario.contact, scenario.num_individuals, seed)
    hg = simulate_mobility(pop, scenario.mobility, scenario.num_days, seed)
    if num_timesteps is not None:
        hg = hg.truncate(num_timesteps)
    states, sources = run_sir(hg, scenario.pathogen, seed, population=pop, contact=scenario.contact)
    return Episode(hg, states, sources, episode_id)


def generate_episodes(scenario: Scenario, count: int, base_seed: int, num_timesteps: int | None = None) -> list:
    """``count`` independent episodes with seeds ``base_seed * 1000 + i``."""
    return [generate_episode(scenario, base_seed * 1000 + i, i, num_timesteps) for i in range(count)]
