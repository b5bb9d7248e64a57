import math

import numpy as np
import pytest

from services.carbon_pricing import (
    compute_price_report,
    cost_emission_frame,
    covers_cost,
    decay_check,
    gap_value,
    horizon_sweep,
    k_par,
    k_par_root,
    k_par_star,
    k_scc,
    relative_change,
    scc_curve,
    scc_deviation,
    scc_revenue,
)
from services.dice_model import AbatementPolicy, simulate
from services.errors import AnalyticsError, GridMismatchError, UndefinedPriceError
from services.parameters import override_parameters


@pytest.fixture
def random_trajectory(make_trajectory):
    rng = np.random.default_rng(7)
    costs = rng.uniform(0.0, 5.0, 40)
    emissions = rng.uniform(1.0, 40.0, 40)
    return make_trajectory(costs, emissions)


@pytest.fixture(scope="module")
def century_params(default_params):
    return override_parameters(default_params, {"time.time_horizon_years": 100})


def test_gap_at_zero_price_is_discounted_cost(random_trajectory):
    traj = random_trajectory
    expected = np.sum(traj.C / traj.N) * traj.step_size
    assert gap_value(0.0, traj) == pytest.approx(expected, rel=1e-12)


def test_gap_is_negative_without_costs(make_trajectory):
    traj = make_trajectory(np.zeros(10), np.full(10, 3.0))
    assert gap_value(10.0, traj) < 0


def test_par_price_zeroes_the_gap(random_trajectory):
    par = k_par(random_trajectory)
    scale = gap_value(0.0, random_trajectory)
    assert abs(gap_value(par, random_trajectory)) <= 1e-9 * scale
    assert k_par_root(random_trajectory) == pytest.approx(par, rel=1e-9)


def test_gap_decreases_in_price(random_trajectory):
    values = [gap_value(K, random_trajectory) for K in (0.0, 10.0, 100.0, 1000.0)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_par_price_edge_cases(make_trajectory):
    assert k_par(make_trajectory(np.zeros(5), np.ones(5))) == 0.0
    with pytest.raises(UndefinedPriceError):
        k_par(make_trajectory(np.ones(5), np.zeros(5)))


def test_par_price_scales_with_costs(random_trajectory, make_trajectory):
    scaled = make_trajectory(3.0 * random_trajectory.C, random_trajectory.E)
    assert k_par(scaled) == pytest.approx(3.0 * k_par(random_trajectory), rel=1e-12)


def test_back_loaded_costs_get_cheaper_with_faster_numeraire(make_trajectory):
    slow = make_trajectory([0.0, 1.0], [1.0, 0.0], rate=0.01)
    fast = make_trajectory([0.0, 1.0], [1.0, 0.0], rate=0.05)
    assert k_par(fast) < k_par(slow)


def test_one_period_horizon(random_trajectory):
    traj = random_trajectory
    assert k_par(traj, horizon=1) == pytest.approx(1000.0 * traj.C[0] / traj.E[0])


def test_horizon_must_lie_on_the_trajectory(random_trajectory):
    with pytest.raises(AnalyticsError):
        k_par(random_trajectory, horizon=41)
    with pytest.raises(AnalyticsError):
        k_par(random_trajectory, horizon=0)


def test_par_star_excludes_counterfactual_damages(make_trajectory):
    damage = np.full(10, 0.5)
    traj = make_trajectory(np.full(10, 2.0), np.full(10, 4.0), damage_cost=damage)
    counterfactual = make_trajectory(np.full(10, 0.5), np.zeros(10), damage_cost=damage)
    expected = 1000.0 * np.sum(traj.C_A / traj.N) / np.sum(traj.E)
    assert k_par_star(traj, counterfactual) == pytest.approx(expected, rel=1e-12)
    assert k_par_star(traj, counterfactual) < k_par(traj)


def test_par_star_needs_matching_grids(make_trajectory):
    traj = make_trajectory(np.ones(10), np.ones(10))
    with pytest.raises(GridMismatchError):
        k_par_star(traj, make_trajectory(np.ones(9), np.ones(9)))
    with pytest.raises(GridMismatchError):
        k_par_star(traj, make_trajectory(np.ones(10), np.ones(10), rate=0.03))


def test_swap_rate_of_a_numeraire_growing_scc_is_its_level(random_trajectory):
    traj = random_trajectory
    assert k_scc(25.0 * traj.N, traj) == pytest.approx(25.0, rel=1e-12)


def test_swap_rate_is_linear_and_bounded(random_trajectory):
    traj = random_trajectory
    rng = np.random.default_rng(3)
    scc = rng.uniform(5.0, 80.0, traj.n_periods)
    value = k_scc(scc, traj)
    assert k_scc(2.0 * scc, traj) == pytest.approx(2.0 * value, rel=1e-12)
    discounted = scc / traj.N
    assert discounted.min() <= value <= discounted.max()


def test_deviation_is_emission_weighted_zero(random_trajectory):
    traj = random_trajectory
    scc = np.linspace(10.0, 200.0, traj.n_periods)
    swap = k_scc(scc, traj)
    deviation = scc_deviation(scc, swap, traj)
    scale = np.sum(np.abs(scc / traj.N) * traj.E)
    assert abs(np.sum(deviation * traj.E)) <= 1e-9 * scale

    assert np.all(scc_deviation(np.zeros(traj.n_periods), 0.0, traj) == 0.0)


def test_revenue_of_charging_scc(random_trajectory):
    traj = random_trajectory
    scc = np.full(traj.n_periods, 40.0)
    expected = np.sum(40.0 * traj.E / traj.N) / 1000.0
    assert scc_revenue(scc, traj) == pytest.approx(expected, rel=1e-12)
    assert covers_cost(50.0, 40.0) == (True, 1.25)
    assert covers_cost(30.0, 40.0)[0] is False


def test_horizon_sweep_reports_undefined_prices_as_nan(make_trajectory):
    emissions = np.concatenate([np.zeros(5), np.ones(5)])
    traj = make_trajectory(np.ones(10), emissions)
    points = horizon_sweep(traj, traj, [10, 3])
    assert [p.horizon for p in points] == [3.0, 10.0]
    assert math.isnan(points[0].k_par)
    assert points[1].k_par == pytest.approx(k_par(traj))


def test_relative_change_ignores_noise():
    reference = np.array([1.0, 0.5, 1e-12])
    other = np.array([1.01, 0.5, 5e-12])
    assert relative_change(reference, other) == pytest.approx(0.01)


def test_decay_check(make_trajectory):
    decayed = make_trajectory(np.linspace(1.0, 0.0, 20), np.linspace(10.0, 0.0, 20))
    assert decay_check(decayed)['passed']
    flat = make_trajectory(np.ones(20), np.ones(20))
    assert not decay_check(flat)['passed']


def test_cost_emission_frame(make_trajectory):
    trajectory = make_trajectory([2.0, 3.0, 4.0], [10.0, 20.0, 30.0], numeraire=[1.0, 2.0, 4.0],
                                 damage_cost=[0.5, 1.0, 1.5])
    frame = cost_emission_frame(trajectory)
    assert list(frame['period']) == [0, 1, 2]
    assert list(frame['abatement_cost']) == [1.5, 2.0, 2.5]
    assert list(frame['discounted_cost']) == [2.0, 1.5, 1.0]


def test_scc_vanishes_without_damages(damage_free_params):
    policy = AbatementPolicy.ramp(damage_free_params)
    scc = scc_curve(damage_free_params, policy)
    assert np.all(np.abs(scc) < 1e-9)


def test_scc_is_positive_and_converged(century_params):
    policy = AbatementPolicy.ramp(century_params)
    full = scc_curve(century_params, policy)
    halved = scc_curve(century_params, policy, 0.5, 0.005)
    assert full.shape == (century_params.n_periods,)
    assert np.all(full[:50] > 0)
    assert relative_change(full, halved, noise_floor=1e-6) < 0.02


def test_price_report_is_consistent(century_params):
    policy = AbatementPolicy.ramp(century_params)
    report = compute_price_report(century_params, policy, horizons=[50, 100],
                                  check_convergence=False)
    traj = simulate(century_params, policy)
    assert report.k_par == pytest.approx(k_par(traj), rel=1e-12)
    assert report.k_scc == pytest.approx(k_scc(report.scc_curve, traj), rel=1e-12)
    assert report.scc_initial == report.scc_curve[0]
    assert [p.horizon for p in report.horizon_curve] == [50.0, 100.0]
    assert report.horizon_curve[-1].k_par == pytest.approx(report.k_par, rel=1e-12)
    assert report.k_par_star < report.k_par
    assert set(report.headline()) == {'scc_initial', 'k_scc', 'k_par', 'k_par_star'}
    assert math.isnan(report.scc_convergence_gap)


@pytest.fixture(scope="module")
def preindustrial_params(century_params):
    """Century run starting at carbon equilibrium with no warming and no land use"""
    cc = century_params.carbon_cycle
    return override_parameters(century_params, {
        "carbon_cycle.mat0": cc.mateq,
        "carbon_cycle.mu0": cc.mueq,
        "carbon_cycle.ml0": cc.mleq,
        "climate.tatm0": 0.0,
        "climate.tocean0": 0.0,
        "emissions.eland0": 0.0,
    })


def test_par_star_near_par_without_inherited_warming(preindustrial_params):
    policy = AbatementPolicy.ramp(preindustrial_params)
    report = compute_price_report(preindustrial_params, policy, check_convergence=False)
    # Non-CO2 forcing alone still warms the mu = 1 counterfactual
    assert report.k_par_star < report.k_par
    assert report.k_par_star == pytest.approx(report.k_par, rel=0.10)


def test_par_star_equals_par_without_any_inherited_forcing(preindustrial_params):
    params = override_parameters(preindustrial_params, {"climate.fex0": 0.0, "climate.fex1": 0.0})
    policy = AbatementPolicy.ramp(params)
    traj = simulate(params, policy)
    counterfactual = simulate(params, AbatementPolicy.full_abatement(params))
    assert k_par_star(traj, counterfactual) == pytest.approx(k_par(traj), rel=1e-3)


@pytest.mark.slow
def test_default_prices(calibrated_default, default_params):
    policy = calibrated_default.policy
    horizons = list(range(50, 501, 50))
    report = compute_price_report(default_params, policy, horizons=horizons)
    assert report.scc_initial == pytest.approx(27.0, rel=0.25)
    assert report.k_scc == pytest.approx(45.0, rel=0.25)
    assert report.k_par == pytest.approx(500.0, rel=0.20)
    assert report.k_par_star == pytest.approx(350.0, rel=0.20)
    assert report.k_par_star < report.k_par
    assert report.decay['passed']

    sweep = {p.horizon: p.k_par for p in report.horizon_curve}
    assert sweep[150.0] == pytest.approx(225.0, rel=0.25)
    assert np.all(np.diff([sweep[float(h)] for h in horizons]) > 0)
    assert (sweep[500.0] - sweep[450.0]) / sweep[500.0] < 0.05

    # Negative early, one positive band, negative again before the horizon
    signs = np.sign(report.deviation_curve)
    assert np.all(signs[:10] < 0)
    changes = np.flatnonzero(np.diff(signs[signs != 0]))
    assert len(changes) == 2
    assert report.scc_convergence_gap < 0.02
