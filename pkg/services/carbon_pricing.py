"""
Carbon Pricing Analytics

Implied CO2 prices derived from a simulated trajectory:

- gap swap: V_Gap(K; 0) = sum (C - K * N * E / 1000) / N * dt   ($T at time 0)
- K_par:  constant price that makes the gap swap worth zero
- K_par*: K_par with damages from past emissions removed (mu = 1 counterfactual)
- SCC(t): -(dV/dE(t)) / (dV/dZ(t)), undiscounted, $/tCO2
- K_SCC:  constant price revenue-equivalent to charging SCC(t)

Integrals are left-point sums with dt weights on the model grid. Prices are
in $/tCO2: $T per GtCO2 times PRICE_UNIT.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.optimize import brentq

from services.dice_model import AbatementPolicy, simulate
from services.errors import (
    AnalyticsError,
    DegenerateTrajectoryError,
    GridMismatchError,
    UndefinedPriceError,
)
from services.parameters import PRICE_UNIT
from services.policy_optimizer import evaluate_welfare_rows

logger = logging.getLogger(__name__)

DEFAULT_EMISSION_BUMP = 1.0       # GtCO2/yr
DEFAULT_CONSUMPTION_BUMP = 0.01   # $T/yr

# Halving both SCC bumps must move each entry by less than this
SCC_CONVERGENCE_LIMIT = 0.02


def horizon_periods(trajectory, horizon=None):
    """Number of grid periods covered by a horizon in years"""
    if horizon is None:
        return trajectory.n_periods
    n = int(round(horizon / trajectory.step_size))
    if n < 1 or n > trajectory.n_periods:
        raise AnalyticsError(
            f"horizon {horizon} years outside the trajectory (1..{trajectory.horizon_years:g} years)")
    return n


def discounted_cost(trajectory, horizon=None):
    """sum C(t) / N(t) * dt in $T"""
    n = horizon_periods(trajectory, horizon)
    return float(np.sum(trajectory.total_cost[:n] / trajectory.numeraire[:n]) * trajectory.step_size)


def total_emissions(trajectory, horizon=None):
    """sum E(t) * dt in GtCO2"""
    n = horizon_periods(trajectory, horizon)
    return float(np.sum(trajectory.emissions[:n]) * trajectory.step_size)


def gap_value(K, trajectory, horizon=None):
    """
    Value at time 0 of receiving costs and paying K * N(t) per ton emitted

    Args:
        K: price in $/tCO2
        trajectory: Trajectory
        horizon: years (defaults to the full trajectory)

    Returns:
        $T
    """
    return discounted_cost(trajectory, horizon) - K / PRICE_UNIT * total_emissions(trajectory, horizon)


def _price_ratio(numerator, emissions, label):
    if not emissions > 0:
        raise UndefinedPriceError(f"{label} undefined: total emissions over the horizon are {emissions:g}")
    return PRICE_UNIT * numerator / emissions


def k_par(trajectory, horizon=None):
    """Par price K_par = 1000 * sum C/N dt / sum E dt ($/tCO2)"""
    return _price_ratio(discounted_cost(trajectory, horizon), total_emissions(trajectory, horizon), 'K_par')


def k_par_root(trajectory, horizon=None):
    """K_par found as the root of K -> gap_value(K)"""
    emissions = total_emissions(trajectory, horizon)
    if not emissions > 0:
        raise UndefinedPriceError("K_par undefined: total emissions over the horizon are not positive")
    gap0 = gap_value(0.0, trajectory, horizon)
    slope = emissions / PRICE_UNIT
    # gap is linear and decreasing, so the bracket [lo, hi] surely changes sign
    lo = min(0.0, gap0 / slope) - 1.0
    hi = max(0.0, gap0 / slope) + 1.0
    return brentq(gap_value, lo, hi, args=(trajectory, horizon), xtol=1e-12, rtol=1e-15)


def check_same_grid(first, second):
    """Raise GridMismatchError unless two trajectories share step and numeraire"""
    if first.step_size != second.step_size:
        raise GridMismatchError(
            f"step sizes differ: {first.step_size} vs {second.step_size}")
    if first.n_periods != second.n_periods:
        raise GridMismatchError(
            f"trajectory lengths differ: {first.n_periods} vs {second.n_periods} periods")
    if not np.allclose(first.numeraire, second.numeraire, rtol=1e-12, atol=0.0):
        raise GridMismatchError("numeraire paths differ")


def k_par_star(trajectory, counterfactual, horizon=None):
    """
    K_par excluding damages caused by past emissions

    The numerator uses C(t) - C_D*(t) with C_D* the damage cost of the
    counterfactual run under mu = 1 from the first period on.
    """
    check_same_grid(trajectory, counterfactual)
    n = horizon_periods(trajectory, horizon)
    net_cost = trajectory.total_cost[:n] - counterfactual.damage_cost[:n]
    numerator = float(np.sum(net_cost / trajectory.numeraire[:n]) * trajectory.step_size)
    return _price_ratio(numerator, total_emissions(trajectory, horizon), 'K_par*')


def _scc_rows(params, mu, periods, bump_emission, bump_consumption):
    """Four bumped scenarios per period: E+, E-, Z+, Z-"""
    n = params.n_periods
    count = len(periods)
    rows = np.repeat(mu[np.newaxis, :], 4 * count, axis=0)
    emission_bumps = np.zeros((4 * count, n))
    consumption_bumps = np.zeros((4 * count, n))
    index = np.arange(count)
    emission_bumps[4 * index, periods] = bump_emission
    emission_bumps[4 * index + 1, periods] = -bump_emission
    consumption_bumps[4 * index + 2, periods] = bump_consumption
    consumption_bumps[4 * index + 3, periods] = -bump_consumption
    return rows, emission_bumps, consumption_bumps


def welfare_sensitivities(params, policy, bump_emission=DEFAULT_EMISSION_BUMP,
                          bump_consumption=DEFAULT_CONSUMPTION_BUMP, periods=None, batch_rows=512):
    """
    (dV/dE(t), dV/dZ(t)) per period by central differences

    Emission bumps are added to period-t emissions before the carbon cycle,
    consumption bumps to period-t consumption after costs.
    """
    mu = np.asarray(policy.mu, dtype=float)
    periods = np.arange(len(mu)) if periods is None else np.asarray(periods, dtype=int)
    rows, emission_bumps, consumption_bumps = _scc_rows(
        params, mu, periods, bump_emission, bump_consumption)
    try:
        values = evaluate_welfare_rows(params, rows, batch_rows=batch_rows,
                                       emission_bumps=emission_bumps,
                                       consumption_bumps=consumption_bumps)
    except DegenerateTrajectoryError as e:
        bad = getattr(e, 'rows', np.array([], dtype=int))
        period = int(periods[bad[0] // 4]) if len(bad) else e.period
        raise AnalyticsError(f"SCC bump at period {period} failed: {e.reason}") from e
    dv_de = (values[0::4] - values[1::4]) / (2.0 * bump_emission)
    dv_dz = (values[2::4] - values[3::4]) / (2.0 * bump_consumption)
    return dv_de, dv_dz


def scc_curve(params, policy, bump_emission=DEFAULT_EMISSION_BUMP,
              bump_consumption=DEFAULT_CONSUMPTION_BUMP, periods=None, batch_rows=512):
    """
    Social cost of carbon per period in $/tCO2 (positive = cost)

    Returns:
        np.ndarray aligned with `periods` (all periods by default)
    """
    dv_de, dv_dz = welfare_sensitivities(params, policy, bump_emission, bump_consumption,
                                         periods, batch_rows)
    bad = np.flatnonzero(~(dv_dz > 0))
    if len(bad):
        period = int(bad[0]) if periods is None else int(np.asarray(periods)[bad[0]])
        raise AnalyticsError(
            f"marginal welfare of consumption is not positive at period {period} "
            f"(dV/dZ = {dv_dz[bad[0]]:g})")
    return -dv_de / dv_dz * PRICE_UNIT


def relative_change(reference, other, noise_floor=1e-8):
    """Max relative difference over entries above noise_floor * peak"""
    reference = np.asarray(reference, dtype=float)
    other = np.asarray(other, dtype=float)
    peak = np.max(np.abs(reference)) if reference.size else 0.0
    mask = np.abs(reference) > noise_floor * peak
    if not np.any(mask):
        return 0.0
    return float(np.max(np.abs(other[mask] - reference[mask]) / np.abs(reference[mask])))


def scc_convergence(params, policy, bump_emission=DEFAULT_EMISSION_BUMP,
                    bump_consumption=DEFAULT_CONSUMPTION_BUMP, batch_rows=512):
    """
    SCC curve together with its halved-bump counterpart

    Returns:
        (scc, scc_halved, max relative gap above the noise floor)
    """
    full = scc_curve(params, policy, bump_emission, bump_consumption, batch_rows=batch_rows)
    halved = scc_curve(params, policy, bump_emission / 2.0, bump_consumption / 2.0,
                       batch_rows=batch_rows)
    gap = relative_change(full, halved)
    if gap >= SCC_CONVERGENCE_LIMIT:
        logger.warning("SCC moved by %.2f%% when halving the bumps (limit %.0f%%)",
                       100 * gap, 100 * SCC_CONVERGENCE_LIMIT)
    return full, halved, gap


def k_scc(scc, trajectory, horizon=None):
    """Swap rate K_SCC = sum SCC * E / N dt / sum E dt ($/tCO2)"""
    n = horizon_periods(trajectory, horizon)
    scc = np.asarray(scc, dtype=float)
    if len(scc) < n:
        raise GridMismatchError(f"SCC curve has {len(scc)} periods, horizon needs {n}")
    weighted = np.sum(scc[:n] * trajectory.emissions[:n] / trajectory.numeraire[:n])
    emissions = np.sum(trajectory.emissions[:n])
    if not emissions > 0:
        raise UndefinedPriceError("K_SCC undefined: total emissions over the horizon are not positive")
    return float(weighted / emissions)


def scc_deviation(scc, k_scc_value, trajectory):
    """SCC(t) / N(t) - K_SCC per period ($/tCO2 at time 0)"""
    scc = np.asarray(scc, dtype=float)
    if len(scc) != trajectory.n_periods:
        raise GridMismatchError(
            f"SCC curve has {len(scc)} periods, trajectory has {trajectory.n_periods}")
    return scc / trajectory.numeraire - k_scc_value


def scc_revenue(scc, trajectory, horizon=None):
    """Value at time 0 of charging SCC(t) on every ton emitted ($T)"""
    n = horizon_periods(trajectory, horizon)
    scc = np.asarray(scc, dtype=float)[:n]
    return float(np.sum(scc * trajectory.emissions[:n] / trajectory.numeraire[:n])
                 * trajectory.step_size / PRICE_UNIT)


def covers_cost(k_scc_value, k_par_value):
    """(K_SCC >= K_par, K_SCC / K_par)"""
    ratio = k_scc_value / k_par_value if k_par_value else float('nan')
    return bool(k_scc_value >= k_par_value), ratio


@dataclass(frozen=True)
class HorizonPoint:
    horizon: float
    k_par: float
    k_par_star: float


def horizon_sweep(trajectory, counterfactual, horizons):
    """
    K_par(T) and K_par*(T) for each horizon T in years

    An undefined price at one horizon is reported as NaN, not raised.
    """
    check_same_grid(trajectory, counterfactual)
    points = []
    for horizon in sorted(horizons):
        horizon_periods(trajectory, horizon)
        try:
            par = k_par(trajectory, horizon)
        except UndefinedPriceError as e:
            logger.warning("Horizon %g: %s", horizon, e)
            par = float('nan')
        try:
            par_star = k_par_star(trajectory, counterfactual, horizon)
        except UndefinedPriceError as e:
            logger.warning("Horizon %g: %s", horizon, e)
            par_star = float('nan')
        points.append(HorizonPoint(float(horizon), par, par_star))
    return points


def cost_emission_frame(trajectory):
    """Cost and emission series with discounted cost, one row per period"""
    return pd.DataFrame({
        'period': np.arange(trajectory.n_periods),
        'year': trajectory.years,
        'total_cost': trajectory.total_cost,
        'abatement_cost': trajectory.abatement_cost,
        'damage_cost': trajectory.damage_cost,
        'emissions': trajectory.emissions,
        'numeraire': trajectory.numeraire,
        'discounted_cost': trajectory.total_cost / trajectory.numeraire,
    })


def decay_check(trajectory, threshold=0.01):
    """
    Check that emissions and discounted cost have decayed by the horizon

    Passes when E(T) < threshold * peak E and C(T)/N(T) < threshold * peak C/N.
    """
    emissions = np.asarray(trajectory.emissions)
    discounted = np.asarray(trajectory.total_cost) / np.asarray(trajectory.numeraire)
    peak_e = np.max(np.abs(emissions))
    peak_c = np.max(np.abs(discounted))
    emission_ratio = abs(emissions[-1]) / peak_e if peak_e > 0 else 0.0
    cost_ratio = abs(discounted[-1]) / peak_c if peak_c > 0 else 0.0
    return {
        'emission_ratio': float(emission_ratio),
        'discounted_cost_ratio': float(cost_ratio),
        'passed': bool(emission_ratio < threshold and cost_ratio < threshold),
    }


@dataclass
class PriceReport:
    k_par: float
    k_par_star: float
    k_scc: float
    scc_curve: np.ndarray
    scc_initial: float
    gap_at_zero: float
    deviation_curve: np.ndarray
    horizon_curve: list
    years: np.ndarray
    scc_revenue: float = float('nan')
    covers_cost: bool = False
    coverage_ratio: float = float('nan')
    scc_convergence_gap: float = float('nan')
    decay: dict = field(default_factory=dict)

    def headline(self):
        return {
            'scc_initial': self.scc_initial,
            'k_scc': self.k_scc,
            'k_par': self.k_par,
            'k_par_star': self.k_par_star,
        }


def compute_price_report(params, policy, horizons=(), bump_emission=DEFAULT_EMISSION_BUMP,
                         bump_consumption=DEFAULT_CONSUMPTION_BUMP, check_convergence=True,
                         batch_rows=512, trajectory=None):
    """
    All carbon prices for one calibrated policy

    Args:
        params: ModelParameters
        policy: AbatementPolicy (normally calibrated)
        horizons: years for the horizon sweep
        check_convergence: also evaluate the SCC with halved bumps and warn
            when it moves by more than 2%
        trajectory: optional pre-computed simulate(params, policy)

    Returns:
        PriceReport
    """
    trajectory = trajectory if trajectory is not None else simulate(params, policy)
    counterfactual = simulate(params, AbatementPolicy.full_abatement(params))

    if check_convergence:
        scc, _, convergence_gap = scc_convergence(params, policy, bump_emission, bump_consumption,
                                                  batch_rows)
    else:
        scc = scc_curve(params, policy, bump_emission, bump_consumption, batch_rows=batch_rows)
        convergence_gap = float('nan')

    par = k_par(trajectory)
    swap = k_scc(scc, trajectory)
    covered, ratio = covers_cost(swap, par)

    report = PriceReport(
        k_par=par,
        k_par_star=k_par_star(trajectory, counterfactual),
        k_scc=swap,
        scc_curve=scc,
        scc_initial=float(scc[0]),
        gap_at_zero=gap_value(0.0, trajectory),
        deviation_curve=scc_deviation(scc, swap, trajectory),
        horizon_curve=horizon_sweep(trajectory, counterfactual, horizons) if horizons else [],
        years=trajectory.years,
        scc_revenue=scc_revenue(scc, trajectory),
        covers_cost=covered,
        coverage_ratio=ratio,
        scc_convergence_gap=convergence_gap,
        decay=decay_check(trajectory),
    )
    logger.info("Prices: SCC(%d)=%.2f K_SCC=%.2f K_par=%.2f K_par*=%.2f",
                int(trajectory.years[0]), report.scc_initial, report.k_scc,
                report.k_par, report.k_par_star)
    return report
