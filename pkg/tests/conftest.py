import numpy as np
import pytest

from epidhgnn.hypergraph import DynamicHypergraph, StateSequence
from epidhgnn.model import ModelConfig, Window, init_params


def random_hypergraph(rng, N, E, T, p=0.4):
    """Random dynamic hypergraph; every individual sits in at least one location."""
    rows = []
    for t in range(T):
        mask = rng.random((N, E)) < p
        mask[np.arange(N), rng.integers(0, E, size=N)] = True
        v, e = np.nonzero(mask)
        rows.append(np.column_stack([np.full(len(v), t), e, v]))
    return DynamicHypergraph(N, E, T, np.concatenate(rows))


def random_states(rng, N, T, mask_before=0):
    """Monotone S*I*R* trajectories with the first ``mask_before`` frames hidden."""
    start = rng.integers(0, T + 1, size=N)
    stop = start + rng.integers(0, T + 1, size=N)
    t = np.arange(T)[:, None]
    codes = np.where(t < start, 0, np.where(t < stop, 1, 2))
    codes[:mask_before] = -1
    return StateSequence(codes)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_window(rng):
    hg = random_hypergraph(rng, 8, 3, 6)
    return Window(hg, random_states(rng, 8, 6, mask_before=1))


@pytest.fixture
def small_model(rng):
    config = ModelConfig(hidden=4, num_layers=2, kernel=3, mlp_hidden=5)
    return config, init_params(config, rng)


def permute_window(window, perm):
    """The same window with node ``v`` renamed ``perm[v]``."""
    hg = window.hypergraph
    c = hg.contacts.copy()
    c[:, 2] = perm[c[:, 2]]
    hg2 = DynamicHypergraph(hg.num_individuals, hg.num_locations, hg.num_timesteps, c)
    codes = np.empty_like(window.states.codes)
    codes[:, perm] = window.states.codes
    return Window(hg2, StateSequence(codes))


def max_relative_error(analytic, numeric, floor=1e-6):
    a, n = np.asarray(analytic), np.asarray(numeric)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def finite_difference_check(loss_and_grads, params, step=1e-5):
    """Largest relative error per tensor between analytic and central-difference gradients.

    ``loss_and_grads(params)`` returns ``(loss, grads)``.
    """
    _, grads = loss_and_grads(params)
    errors = {}
    for name, p in params.items():
        numeric = np.zeros_like(p)
        flat = p.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            plus = loss_and_grads(params)[0]
            flat[i] = orig - step
            minus = loss_and_grads(params)[0]
            flat[i] = orig
            num_flat[i] = (plus - minus) / (2 * step)
        errors[name] = max_relative_error(grads[name], numeric)
    return errors
