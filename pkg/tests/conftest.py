import numpy as np
import pytest

from homobs import design as ds
from homobs import scenarios as sc
from homobs import sim


@pytest.fixture(scope="session")
def pendulum():
    return sc.pendulum_plant()


@pytest.fixture(scope="session")
def pendulum_design(pendulum):
    return ds.design_observer(pendulum, ds.FILTERING, sc.PENDULUM_NU, sc.PENDULUM_RHO,
                              sc.PENDULUM_GAMMA)


@pytest.fixture(scope="session")
def di():
    return sc.double_integrator()


@pytest.fixture(scope="session")
def di_design(di):
    return ds.design_observer(di, ds.FILTERING, -1 / 3, 1.0, 1.0)


def pendulum_config(**kw):
    base = dict(dt=sc.PENDULUM_DT, t_end=sc.PENDULUM_T_END, x0=sc.PENDULUM_X0,
                feedback_gain=sc.PENDULUM_K, luenberger_gain=sc.PENDULUM_L_LIN)
    base.update(kw)
    return sim.SimConfig(**base)


@pytest.fixture(scope="session")
def nominal_run(pendulum, pendulum_design):
    return sim.simulate(pendulum, pendulum_design, pendulum_config())


@pytest.fixture(scope="session")
def perturbed_run(pendulum, pendulum_design):
    pert = sim.Sinusoid(**sc.PENDULUM_PERTURBATION)
    return sim.simulate(pendulum, pendulum_design, pendulum_config(perturbation=pert))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
