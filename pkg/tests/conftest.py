import numpy as np
import pytest

from cfassign import gnn
from cfassign import scenario as sc


def make_small_scenario(**overrides):
    base = dict(
        n_aps=5, n_users=4, area=(100.0, 100.0),
        ap_positions=sc.place_aps((3, 2), 5, (100.0, 100.0)),
        min_serving_aps=2, max_served_users=2,
        noise_power=1.0, gain_scale=25.0, rician_variance=0.01)
    base.update(overrides)
    return sc.Scenario(**base)


def make_large_scenario(**overrides):
    base = dict(
        n_aps=20, n_users=15, area=(1000.0, 1000.0),
        ap_positions=sc.place_aps((5, 4), 20, (1000.0, 1000.0)),
        min_serving_aps=2, max_served_users=2,
        noise_power=1.0, gain_scale=100.0, rician_variance=0.01)
    base.update(overrides)
    return sc.Scenario(**base)


def randomize_params(model, rng, scale=0.5):
    """Replace every parameter (weights and biases) with random values."""
    arrays = {name: rng.normal(0.0, scale, size=model.store[name].value.shape)
              for name in model.store.names()}
    model.store.load_arrays(arrays)
    return model


@pytest.fixture
def small_scen():
    return make_small_scenario()


@pytest.fixture
def large_scen():
    return make_large_scenario()
