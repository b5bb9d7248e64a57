import numpy as np
import pandas as pd
import pytest

from data.policy_cache import fetch_calibrated_policy, load_policy_csv, save_policy_csv
from database.db import get_session
from database.models import CalibrationRun
from services.dice_model import AbatementPolicy
from services.errors import ConfigError, ReportIOError
from services.parameters import override_parameters
from services.policy_optimizer import OptimizerSettings

SETTINGS = OptimizerSettings(max_iterations=20)


@pytest.fixture(scope="module")
def tiny_params(default_params):
    return override_parameters(default_params, {"time.time_horizon_years": 20})


def test_policy_csv_reloads_exactly(tmp_path, short_params):
    rng = np.random.default_rng(11)
    policy = AbatementPolicy(rng.uniform(0.0, 1.0, short_params.n_periods))
    path = save_policy_csv(policy, short_params, tmp_path / 'out' / 'policy.csv')
    frame = pd.read_csv(path)
    assert list(frame.columns) == ['period', 'year', 'mu']
    assert frame['year'].iloc[0] == 2015
    assert np.array_equal(load_policy_csv(path, short_params).mu, policy.mu)


def test_policy_csv_errors(tmp_path, short_params):
    with pytest.raises(ReportIOError):
        load_policy_csv(tmp_path / 'missing.csv', short_params)

    no_mu = tmp_path / 'no_mu.csv'
    pd.DataFrame({'period': [0, 1], 'year': [2015, 2016]}).to_csv(no_mu, index=False)
    with pytest.raises(ConfigError):
        load_policy_csv(no_mu, short_params)

    short = tmp_path / 'short.csv'
    ten_years = override_parameters(short_params, {"time.time_horizon_years": 10})
    save_policy_csv(AbatementPolicy([0.1] * 10), ten_years, short)
    with pytest.raises(ConfigError):
        load_policy_csv(short, short_params)

    gap = tmp_path / 'gap.csv'
    pd.DataFrame({'period': [0, 2], 'year': [2015, 2017], 'mu': [0.1, 0.1]}).to_csv(gap, index=False)
    with pytest.raises(ConfigError):
        load_policy_csv(gap, short_params)


def test_unwritable_policy_path_is_an_io_error(tmp_path, short_params):
    blocker = tmp_path / 'file.txt'
    blocker.write_text('x')
    with pytest.raises(ReportIOError):
        save_policy_csv(AbatementPolicy.ramp(short_params), short_params, blocker / 'policy.csv')


def test_calibration_is_cached(tiny_params):
    first, hit = fetch_calibrated_policy(tiny_params, SETTINGS)
    assert not hit

    second, hit = fetch_calibrated_policy(tiny_params, SETTINGS)
    assert hit
    assert np.array_equal(second.policy.mu, first.policy.mu)
    assert second.iterations == first.iterations
    assert second.converged == first.converged

    session = get_session()
    assert session.query(CalibrationRun).count() == 1


def test_force_refresh_and_changed_inputs_miss_the_cache(tiny_params):
    fetch_calibrated_policy(tiny_params, SETTINGS)

    _, hit = fetch_calibrated_policy(tiny_params, SETTINGS, force_refresh=True)
    assert not hit

    _, hit = fetch_calibrated_policy(tiny_params, OptimizerSettings(max_iterations=21))
    assert not hit

    changed = override_parameters(tiny_params, {"time.numeraire_rate": 0.02})
    _, hit = fetch_calibrated_policy(changed, SETTINGS)
    assert not hit


def test_given_starting_point_bypasses_the_cache(tiny_params):
    fetch_calibrated_policy(tiny_params, SETTINGS)

    start = AbatementPolicy.constant(tiny_params, 0.5)
    result, hit = fetch_calibrated_policy(tiny_params, SETTINGS, initial_policy=start)
    assert not hit
    assert len(result.policy.mu) == tiny_params.n_periods

    session = get_session()
    assert session.query(CalibrationRun).count() == 1
