"""Shared fixtures: the bundled 14-county scenario and a single-node network."""

from pathlib import Path

import numpy as np
import pytest

from config_parser import load_scenario
from model_core import EpidemicParams, NetworkSpec
from quarantine_opt import optimal_quarantine
from scenario_runner import prepare

ROOT = Path(__file__).resolve().parent.parent
SCENARIO = ROOT / "scenarios" / "fixture.json"
FIXTURE_DATA = ROOT / "data" / "fixture"
HALVING_ALPHA = 0.0231


@pytest.fixture(scope="session")
def fixture_config():
    return load_scenario(SCENARIO)


@pytest.fixture(scope="session")
def fixture_model(fixture_config):
    """(net, params, state0, costs) of the calibrated fixture"""
    return prepare(fixture_config)


@pytest.fixture(scope="session")
def fixture_optimal(fixture_model):
    net, params, state0, costs = fixture_model
    return optimal_quarantine(state0.s, net.flow, params, HALVING_ALPHA, costs)


@pytest.fixture
def single_node():
    """n=1, s0=1, tau=1/3, beta_s=0.6: M = [[-0.38492, 0.2], [0.32, -0.2]]"""
    net = NetworkSpec.from_tau(np.array([[1.0 / 3.0]]), np.array([1000.0]), nodes=("solo",))
    params = EpidemicParams.from_beta_s(0.6)
    return net, params, np.ones(1)


@pytest.fixture
def rng():
    return np.random.default_rng(20200310)
