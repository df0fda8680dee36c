import numpy as np
import pytest

from decadapt import (
    IntegratorConfig,
    OscillatorScenario,
    build_oscillator,
    integrate,
)


@pytest.fixture(scope="session")
def scenario():
    return OscillatorScenario()


@pytest.fixture(scope="session")
def oscillator(scenario):
    return build_oscillator(scenario)


@pytest.fixture(scope="session")
def coupled_traj(scenario, oscillator):
    """Reference coupled run, k1 = k2 = 0.4, full 50-unit horizon."""
    return integrate(oscillator, scenario.integrator, scenario.initial_state())


@pytest.fixture(scope="session")
def short_cfg():
    return IntegratorConfig(step=1e-3, t_final=2.0)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)
