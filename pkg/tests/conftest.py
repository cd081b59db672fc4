from __future__ import annotations

import dataclasses

import pytest

from hfda.dynamics import fitzhugh_nagumo
from hfda.observe import identity_observation, simulate_observations
from hfda.optimize import Problem


@pytest.fixture(scope="session")
def fn_small():
    """A desk-scale FitzHugh-Nagumo instance: [0, 5], 100 observations."""
    model = dataclasses.replace(fitzhugh_nagumo(), t_span=(0.0, 5.0))
    obs_model = identity_observation(model.d, 0.1)
    data = simulate_observations(model, model.params_ref, obs_model, 0.05, seed=42)
    problem = Problem(model, data, h=0.25)
    return model, data, problem


@pytest.fixture(scope="session")
def fn_small_noiseless(fn_small):
    model, _, _ = fn_small
    obs_model = identity_observation(model.d, 0.1)
    data = simulate_observations(model, model.params_ref, obs_model, 0.05, seed=42, noise=False)
    problem = Problem(model, data, h=0.25)
    return model, data, problem
