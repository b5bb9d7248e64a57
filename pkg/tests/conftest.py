import numpy as np
import pytest

from database.db import close_session, configure_database
from services.dice_model import SERIES_FIELDS, STATE_FIELDS, Trajectory
from services.parameters import load_parameters, override_parameters
from services.policy_optimizer import calibrate_with_report


@pytest.fixture(scope="session")
def default_params():
    return load_parameters()


@pytest.fixture(scope="session")
def short_params(default_params):
    """Default calibration cut to 60 years"""
    return override_parameters(default_params, {"time.time_horizon_years": 60})


@pytest.fixture(scope="session")
def damage_free_params(default_params):
    return override_parameters(default_params, {
        "time.time_horizon_years": 30,
        "damages.a1": 0.0,
        "damages.a2": 0.0,
    })


@pytest.fixture(autouse=True)
def policy_db(tmp_path):
    """Every test gets its own SQLite cache"""
    configure_database(f"sqlite:///{tmp_path / 'cache.db'}")
    yield
    close_session()


@pytest.fixture(scope="session")
def calibrated_default(default_params):
    return calibrate_with_report(default_params)


def build_trajectory(total_cost, emissions, numeraire=None, damage_cost=None, utility=None,
                     step_size=1.0, rate=0.015):
    """Trajectory with only the series the pricing formulas read filled in"""
    total_cost = np.asarray(total_cost, dtype=float)
    emissions = np.asarray(emissions, dtype=float)
    n = len(emissions)
    if numeraire is None:
        numeraire = (1.0 + rate * step_size) ** np.arange(n, dtype=float)
    damage_cost = np.zeros(n) if damage_cost is None else np.asarray(damage_cost, dtype=float)

    series = {name: np.zeros(n) for name in SERIES_FIELDS + STATE_FIELDS}
    series.update(
        total_cost=total_cost,
        emissions=emissions,
        damage_cost=damage_cost,
        abatement_cost=total_cost - damage_cost,
    )
    if utility is not None:
        series['utility'] = np.asarray(utility, dtype=float)
    return Trajectory(
        step_size=step_size,
        years=2015 + np.arange(n) * step_size,
        numeraire=np.asarray(numeraire, dtype=float),
        mu=np.zeros(n),
        **series,
    )


@pytest.fixture
def make_trajectory():
    return build_trajectory
