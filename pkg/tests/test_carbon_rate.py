import math

import numpy as np
import pytest

from services.carbon_pricing import relative_change
from services.carbon_rate import (
    cost_sensitivities,
    cost_sensitivity_matrix,
    identity_check,
    irr_residual,
    irr_solve,
    r_scc_curve,
    truncate_noise,
    utility_weights,
)
from services.dice_model import AbatementPolicy
from services.errors import AnalyticsError, NoRootError
from services.parameters import override_parameters


@pytest.fixture(scope="module")
def century_params(default_params):
    return override_parameters(default_params, {"time.time_horizon_years": 100})


def test_single_repayment_at_rate_one():
    assert irr_solve(1.0, [0.0, -math.e]) == pytest.approx(1.0, abs=1e-9)


def test_break_even_loan_has_zero_rate():
    series = np.zeros(11)
    series[10] = -1.0
    assert irr_solve(1.0, series) == pytest.approx(0.0, abs=1e-9)


def test_two_equal_repayments():
    expected = -math.log((-0.6 + math.sqrt(2.76)) / 1.2)
    assert expected == pytest.approx(0.12280, abs=1e-5)
    assert irr_solve(1.0, [0.0, -0.6, -0.6]) == pytest.approx(expected, abs=1e-9)


def test_rate_is_scale_invariant():
    series = np.array([0.0, -0.3, -0.4, -0.5])
    assert irr_solve(7.0, 7.0 * series) == pytest.approx(irr_solve(1.0, series), abs=1e-9)


def test_later_repayments_lower_the_rate():
    early = irr_solve(1.0, [0.0, -0.6, -0.6])
    late = irr_solve(1.0, [0.0, 0.0, 0.0, -0.6, -0.6])
    assert late < early


def test_step_size_stretches_offsets():
    assert irr_solve(1.0, [0.0, -math.e], step_size=2.0) == pytest.approx(0.5, abs=1e-9)


def test_negative_rate_found_in_widened_bracket():
    assert irr_solve(1.0, [0.0, -0.5]) == pytest.approx(-math.log(2.0), abs=1e-9)


@pytest.mark.parametrize("principal, series", [
    (0.0, [0.0, -1.0]),
    (-1.0, [0.0, -1.0]),
    (1.0, [0.0, 0.0, 0.0]),
    (1.0, [0.0, -0.1]),
])
def test_no_root(principal, series):
    with pytest.raises(NoRootError):
        irr_solve(principal, series, t_j=4)


def test_residual_increases_with_rate():
    amounts = np.array([-0.6, -0.6])
    offsets = np.array([1.0, 2.0])
    values = [irr_residual(r, 1.0, amounts, offsets) for r in (-0.5, 0.0, 0.5, 1.0)]
    assert all(a < b for a, b in zip(values, values[1:]))


def test_truncate_noise():
    np.testing.assert_array_equal(truncate_noise([1.0, 1e-10, -0.5]), [1.0, 0.0, -0.5])
    np.testing.assert_array_equal(truncate_noise([0.0, 0.0]), [0.0, 0.0])


def test_abatement_pays_back_through_damages(century_params):
    policy = AbatementPolicy.ramp(century_params)
    principal, repayments = cost_sensitivities(century_params, policy, 0)
    assert principal > 0
    assert len(repayments) == century_params.n_periods
    assert repayments[0] == 0.0
    assert np.all(repayments[1:] < 0)


def test_sensitivities_start_at_t_j(century_params):
    policy = AbatementPolicy.ramp(century_params)
    result = cost_sensitivity_matrix(century_params, policy, [0, 5])
    assert np.all(result.damage[1, :5] == 0.0)
    assert len(result.damage_series(1)) == century_params.n_periods - 5
    with pytest.raises(AnalyticsError):
        cost_sensitivities(century_params, policy, century_params.n_periods)


def test_sensitivities_stable_under_halved_bump(century_params):
    policy = AbatementPolicy.ramp(century_params)
    coarse = cost_sensitivity_matrix(century_params, policy, [0], 1e-4)
    fine = cost_sensitivity_matrix(century_params, policy, [0], 5e-5)
    assert relative_change(coarse.abatement, fine.abatement) < 0.05
    assert relative_change(coarse.damage[0], fine.damage[0]) < 0.05


def test_no_damages_no_repayments(damage_free_params):
    policy = AbatementPolicy.ramp(damage_free_params)
    _, repayments = cost_sensitivities(damage_free_params, policy, 0)
    assert np.all(repayments == 0.0)

    report = r_scc_curve(damage_free_params, policy, periods=range(3))
    assert report.no_root_count == 3
    assert np.all(np.isnan(report.r_scc_curve))
    assert not report.financing_profitable.any()
    assert report.identity == {}


def test_free_abatement_has_no_principal(default_params):
    params = override_parameters(default_params, {"time.time_horizon_years": 30,
                                                  "abatement.pback": 0.0})
    principal, _ = cost_sensitivities(params, AbatementPolicy.ramp(params), 0)
    assert principal == 0.0


def test_utility_weight_ratio_is_one_at_t_j(short_params):
    weights = utility_weights(short_params, AbatementPolicy.ramp(short_params), 3, [3, 10, 20])
    assert list(weights.t_k) == [3, 10, 20]
    assert weights.ratios[0] == 1.0
    assert np.all(weights.weights < 0)
    with pytest.raises(AnalyticsError):
        utility_weights(short_params, AbatementPolicy.ramp(short_params), 3, [1])


def test_linear_utility_weights_follow_the_numeraire(default_params):
    params = override_parameters(default_params, {
        "time.time_horizon_years": 60,
        "utility.elasmu": 0.0,
        "economy.gama": 0.01,
        "damages.a2": 0.0,
    })
    t_k = [0, 5, 10, 20, 30, 50]
    weights = utility_weights(params, AbatementPolicy.constant(params, 0.1), 0, t_k)
    expected = 1.0 / 1.015 ** np.array(t_k)
    np.testing.assert_allclose(weights.ratios, expected, rtol=0.03)


def test_identity_sides(century_params):
    policy = AbatementPolicy.ramp(century_params)
    identity = identity_check(century_params, policy, 2)
    principal, repayments = cost_sensitivities(century_params, policy, 2)
    assert identity['t_j'] == 2
    assert identity['principal'] == pytest.approx(principal, rel=1e-9)
    assert identity['r_scc'] == pytest.approx(irr_solve(principal, truncate_noise(repayments), 2),
                                              abs=1e-9)
    # Repayments discounted at r_SCC exactly offset the principal
    assert abs(identity['lhs']) < 1e-6 * identity['principal']
    assert math.isfinite(identity['rhs'])
    assert identity['relative_gap'] >= 0


def test_rate_report(century_params):
    policy = AbatementPolicy.ramp(century_params)
    report = r_scc_curve(century_params, policy, periods=range(5))
    assert list(report.periods) == [0, 1, 2, 3, 4]
    assert report.no_root_count == 0
    assert np.all(np.isfinite(report.r_scc_curve))
    assert report.discount_rate == 0.015
    assert report.continuous_discount_rate == pytest.approx(math.log(1.015))
    assert np.all(report.utility_rate == 0.015)
    assert report.identity['t_j'] == 0
    assert report.identity['r_scc'] == pytest.approx(report.r_scc_curve[0], abs=1e-9)
    frame = report.to_frame()
    assert list(frame.columns) == ['period', 'year', 'r_scc', 'discount_rate',
                                   'continuous_discount_rate', 'utility_rate',
                                   'marginal_utility_rate', 'financing_profitable',
                                   'stationarity_residual', 'no_root_flag']
    assert len(frame) == 5
    with pytest.raises(AnalyticsError):
        r_scc_curve(century_params, policy, periods=[century_params.n_periods])


@pytest.mark.slow
def test_default_rates(calibrated_default, default_params):
    report = r_scc_curve(default_params, calibrated_default.policy, periods=range(50))
    assert report.early_average(10) == pytest.approx(0.04, abs=0.015)
    assert np.all(report.r_scc_curve[~report.no_root] > 0.015)
    assert report.identity['relative_gap'] < 0.05
