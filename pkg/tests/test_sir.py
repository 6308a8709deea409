import itertools
from dataclasses import replace

import numpy as np
import pytest

from epidhgnn.episim import ConfigError, ContactConfig, MobilityConfig, generate_population, simulate_mobility
from epidhgnn.hypergraph import INFECTED, RECOVERED, SUSCEPTIBLE, build_incidence, is_sir_monotone
from epidhgnn.sir import PathogenParams, edge_pressure, expected_infection_prob, run_sir, seed_infection, step_sir

from conftest import random_hypergraph


def test_params_validation(tmp_path):
    with pytest.raises(ConfigError, match="beta"):
        PathogenParams(beta=1.5)
    with pytest.raises(ConfigError, match="nu"):
        PathogenParams(nu=0.0)
    with pytest.raises(ConfigError, match="mode"):
        PathogenParams(mode="sis")
    p = tmp_path / "pathogen.json"
    p.write_text('{"beta": 0.1, "gamma": 0.2, "nu": 1.5, "num_sources": 2, "mode": "pairwise", "seed": 7}')
    params, seed = PathogenParams.from_json(p)
    assert params == PathogenParams(0.1, 0.2, 1.5, 2, "pairwise") and seed == 7
    p.write_text('{"beta": 0.1}')
    with pytest.raises(ConfigError, match="missing"):
        PathogenParams.from_json(p)


def test_seed_infection():
    x0, src = seed_infection(5, 1, seed=0)
    assert (x0 == INFECTED).sum() == 1 and (x0 == SUSCEPTIBLE).sum() == 4
    assert x0[src[0]] == INFECTED
    x_all, _ = seed_infection(5, 5, seed=0)
    assert (x_all == INFECTED).all()
    np.testing.assert_array_equal(seed_infection(50, 3, seed=9)[1], seed_infection(50, 3, seed=9)[1])
    with pytest.raises(ValueError):
        seed_infection(5, 0, seed=0)
    with pytest.raises(ValueError):
        seed_infection(5, 6, seed=0)


def test_edge_pressure_closed_form():
    np.testing.assert_allclose(edge_pressure([0, 1, 2], 0.3, 1.0), [0.0, 0.3, 1 - 0.7**2])
    np.testing.assert_allclose(edge_pressure([4], 0.3, 0.5), [1 - 0.7**2])


def test_expected_prob_examples():
    # v0 is susceptible and shares e0 with v1 and e1 with v2, both infected
    H = build_incidence([(0, 0), (0, 1), (1, 0), (1, 2)], 3, 2)
    x = np.array([SUSCEPTIBLE, INFECTED, INFECTED])
    p = expected_infection_prob(H, x, PathogenParams(beta=0.5, nu=1.0))
    np.testing.assert_allclose(p, [0.75, 0.0, 0.0])
    assert not expected_infection_prob(H, x, PathogenParams(beta=0.0)).any()
    onehot = np.eye(3)[x]
    np.testing.assert_array_equal(expected_infection_prob(H, onehot, PathogenParams(beta=0.5)), p)


def test_beta_one_saturates():
    H = build_incidence([(0, 0), (0, 1), (1, 2)], 3, 2)
    p = expected_infection_prob(H, np.array([SUSCEPTIBLE, INFECTED, SUSCEPTIBLE]), PathogenParams(beta=1.0))
    np.testing.assert_array_equal(p, [1.0, 0.0, 0.0])


def test_step_shape_mismatch():
    H = build_incidence([(0, 0)], 2, 1)
    with pytest.raises(ValueError):
        step_sir(H, np.zeros(3, dtype=np.int8), PathogenParams(), 0)


def test_step_beta_zero_and_gamma_one(rng):
    hg = random_hypergraph(rng, 30, 4, 1)
    x = rng.integers(0, 3, size=30).astype(np.int8)
    nxt = step_sir(hg.incidence(0), x, PathogenParams(beta=0.0, gamma=0.3), rng)
    np.testing.assert_array_equal(nxt[x == SUSCEPTIBLE], SUSCEPTIBLE)
    assert (nxt[x == RECOVERED] == RECOVERED).all()
    nxt = step_sir(hg.incidence(0), x, PathogenParams(beta=0.0, gamma=1.0), rng)
    assert (nxt[x == INFECTED] == RECOVERED).all()


def test_pair_monte_carlo():
    # single hyperedge {v0 infected, v1 susceptible}: P(v1 infected) = beta
    H = build_incidence([(0, 0), (0, 1)], 2, 1)
    x = np.array([INFECTED, SUSCEPTIBLE], dtype=np.int8)
    params = PathogenParams(beta=0.3, gamma=0.0)
    rng = np.random.default_rng(1)
    hits = sum(step_sir(H, x, params, rng)[1] == INFECTED for _ in range(100_000))
    assert abs(hits / 100_000 - 0.3) <= 0.005


def _brute_force_clique_prob(groups, infected, beta, v):
    """Exact infection probability of ``v`` by enumerating every transmission outcome
    along the clique expansion of ``groups`` (pairs counted once per shared group)."""
    edges = [(u, v) for g in groups if v in g for u in g if u != v and infected[u]]
    total = 0.0
    for outcome in itertools.product((0, 1), repeat=len(edges)):
        prob = np.prod([beta if o else 1 - beta for o in outcome]) if edges else 1.0
        if any(outcome):
            total += prob
    return total


def test_clique_expansion_degeneracy():
    rng = np.random.default_rng(5)
    for _ in range(60):
        N = int(rng.integers(2, 7))
        E = int(rng.integers(1, 6))
        groups = [sorted(rng.choice(N, size=int(rng.integers(1, 3)), replace=False).tolist()) for _ in range(E)]
        H = build_incidence([(e, v) for e, g in enumerate(groups) for v in g], N, E)
        codes = rng.integers(0, 3, size=N).astype(np.int8)
        beta = float(rng.uniform(0.05, 0.95))
        hyper = expected_infection_prob(H, codes, PathogenParams(beta=beta, nu=1.0))
        pairs = [tuple(g) for g in groups if len(g) == 2]
        pairwise = expected_infection_prob(H, codes, PathogenParams(beta=beta, mode="pairwise"), pairs)
        infected = codes == INFECTED
        for v in range(N):
            exact = _brute_force_clique_prob(groups, infected, beta, v) if codes[v] == SUSCEPTIBLE else 0.0
            assert hyper[v] == pytest.approx(exact, abs=1e-12)
            assert pairwise[v] == pytest.approx(exact, abs=1e-12)


def test_ten_node_oracle(rng):
    hg = random_hypergraph(rng, 10, 3, 1, p=0.3)
    H = hg.incidence(0)
    x = np.array([1, 0, 0, 1, 0, 2, 0, 0, 1, 0], dtype=np.int8)
    params = PathogenParams(beta=0.2, gamma=0.1, nu=1.3)
    p = expected_infection_prob(H, x, params)
    n = 20_000
    step_rng = np.random.default_rng(3)
    freq = np.mean([step_sir(H, x, params, step_rng) == INFECTED for _ in range(n)], axis=0)
    sus = x == SUSCEPTIBLE
    bound = 3 * np.sqrt(p * (1 - p) / n) + 1e-12
    assert np.all(np.abs(freq[sus] - p[sus]) <= bound[sus])


@pytest.fixture(scope="module")
def small_town():
    mob, con = MobilityConfig(), ContactConfig()
    pop = generate_population(mob, con, 120, seed=0)
    return pop, con, simulate_mobility(pop, mob, 3, seed=0)


def test_run_sir_constant_without_dynamics(small_town):
    _, _, hg = small_town
    states, _ = run_sir(hg, PathogenParams(beta=0.0, gamma=0.0, num_sources=3), seed=1)
    assert (states.codes == states.codes[0]).all()


@pytest.mark.parametrize("mode", ["hyperedge", "pairwise"])
def test_run_sir_conservation_and_monotonicity(small_town, mode):
    pop, con, hg = small_town
    con = replace(con, acquaintance_prob=0.5, stranger_prob=0.1)
    params = PathogenParams(beta=0.2, gamma=0.1, num_sources=2, mode=mode)
    states, sources = run_sir(hg, params, seed=4, population=pop, contact=con)
    assert states.num_timesteps == hg.num_timesteps
    np.testing.assert_array_equal(states.counts().sum(axis=1), 120)
    assert is_sir_monotone(states.codes)
    cumulative = states.counts()[:, 1:].sum(axis=1)
    assert (np.diff(cumulative) >= 0).all()
    assert (states.codes[0, sources] == INFECTED).all()


def test_run_sir_deterministic(small_town):
    _, _, hg = small_town
    params = PathogenParams(beta=0.1)
    a, sa = run_sir(hg, params, seed=2)
    b, sb = run_sir(hg, params, seed=2)
    assert a == b and np.array_equal(sa, sb)


def test_pairwise_needs_population(small_town):
    _, _, hg = small_town
    with pytest.raises(ValueError, match="pairwise"):
        run_sir(hg, PathogenParams(mode="pairwise"), seed=0)
