"""
Interest Rate of Carbon

The abatement decision at t_j read as a loan: the extra abatement cost
dC_A(t_j)/dmu(t_j) is the principal, the avoided damages dC_D(t_k)/dmu(t_j)
for t_k >= t_j are the repayments. r_SCC(t_j) is the internal rate of return

    dC_A/dmu + sum_k dC_D(t_k)/dmu * exp(-r (t_k - t_j)) = 0

R(t_j, t_k) are marginal-welfare weights of a time-t_k cost change, used to
check the rate against the welfare-derived discounting of the model.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.optimize import brentq

from services.dice_model import marginal_utility_rate, simulate, simulate_batch
from services.errors import AnalyticsError, DegenerateTrajectoryError, NoRootError
from services.policy_optimizer import bumped_mu, evaluate_welfare_rows

logger = logging.getLogger(__name__)

DEFAULT_MU_BUMP = 1e-4
DEFAULT_COST_BUMP = 0.01          # $T/yr
RATE_BRACKET = (-0.5, 1.0)
WIDE_RATE_BRACKET = (-1.0, 2.0)
TRUNCATION = 1e-8                 # relative to the peak repayment
MAX_EXPONENT = 700.0


@dataclass
class CostSensitivities:
    """Responses of the cost series to bumping mu at each period in `periods`"""
    periods: np.ndarray
    abatement: np.ndarray           # dC_A(t_j)/dmu(t_j), one per period
    damage: np.ndarray              # (len(periods), T) dC_D(t_k)/dmu(t_j), zero for k < j
    total: np.ndarray               # (len(periods), T) dC(t_k)/dmu(t_j)

    def damage_series(self, index):
        """Repayment leg for the index-th period: entries t_k >= t_j"""
        j = int(self.periods[index])
        return self.damage[index, j:]


def truncate_noise(series, relative=TRUNCATION):
    """Zero entries below relative * peak magnitude"""
    series = np.array(series, dtype=float)
    peak = np.max(np.abs(series)) if series.size else 0.0
    series[np.abs(series) < relative * peak] = 0.0
    return series


def cost_sensitivity_matrix(params, policy, periods, bump=DEFAULT_MU_BUMP, batch_rows=128):
    """
    Re-simulate with mu(t_j) bumped up and down for every t_j in periods

    Bumped values are clipped to [0, max_abatement]; a clipped side makes
    the difference one-sided.
    """
    mu = np.asarray(policy.mu, dtype=float)
    periods = np.asarray(periods, dtype=int)
    rows, up, down = bumped_mu(params, mu, periods, bump)
    n = params.n_periods

    abatement = np.empty(len(periods))
    damage = np.zeros((len(periods), n))
    total = np.zeros((len(periods), n))
    chunk = max(2, batch_rows - batch_rows % 2)
    for start in range(0, rows.shape[0], chunk):
        stop = min(start + chunk, rows.shape[0])
        try:
            batch = simulate_batch(params, rows[start:stop])
        except DegenerateTrajectoryError as e:
            bad = getattr(e, 'rows', np.array([], dtype=int))
            period = int(periods[(start + bad[0]) // 2]) if len(bad) else e.period
            raise AnalyticsError(f"cost sensitivity at t_j = {period} failed: {e.reason}") from e
        for local in range(0, stop - start, 2):
            index = (start + local) // 2
            j = periods[index]
            width = up[index] - down[index]
            d_abatement = (batch.abatement_cost[local] - batch.abatement_cost[local + 1]) / width
            d_damage = (batch.damage_cost[local] - batch.damage_cost[local + 1]) / width
            d_total = (batch.total_cost[local] - batch.total_cost[local + 1]) / width
            abatement[index] = d_abatement[j]
            damage[index, j:] = d_damage[j:]
            total[index, j:] = d_total[j:]
    return CostSensitivities(periods=periods, abatement=abatement, damage=damage, total=total)


def cost_sensitivities(params, policy, t_j, bump=DEFAULT_MU_BUMP):
    """
    (dC_A(t_j)/dmu(t_j), dC_D(t_k)/dmu(t_j) for t_k >= t_j)

    Args:
        t_j: period index
        bump: mu bump (clipped one-sided at active bounds)
    """
    if not 0 <= t_j < params.n_periods:
        raise AnalyticsError(f"period {t_j} outside the model horizon")
    result = cost_sensitivity_matrix(params, policy, [t_j], bump)
    return float(result.abatement[0]), result.damage_series(0)


def irr_residual(rate, abatement_sens, amounts, offsets):
    exponent = np.clip(-rate * offsets, -MAX_EXPONENT, MAX_EXPONENT)
    return abatement_sens + float(np.sum(amounts * np.exp(exponent)))


def irr_solve(abatement_sens, damage_series, t_j=0, step_size=1.0, bracket=RATE_BRACKET, xtol=1e-10):
    """
    Internal rate of return of the abatement loan at period t_j

    Args:
        abatement_sens: principal dC_A(t_j)/dmu(t_j) ($T), must be positive
        damage_series: repayments dC_D(t_k)/dmu(t_j) for t_k = t_j, t_j + 1, ...
        t_j: period index (for error messages)
        step_size: years between entries of damage_series

    Returns:
        rate per year

    Raises:
        NoRootError if the residual does not change sign in the bracket
        (after widening it once)
    """
    if not abatement_sens > 0:
        raise NoRootError(t_j, f"principal {abatement_sens:g} is not positive")
    series = np.asarray(damage_series, dtype=float)
    offsets = np.arange(len(series)) * step_size
    nonzero = series != 0
    amounts, offsets = series[nonzero], offsets[nonzero]
    if amounts.size == 0:
        raise NoRootError(t_j, "no repayments")

    for lo, hi in (bracket, WIDE_RATE_BRACKET):
        f_lo = irr_residual(lo, abatement_sens, amounts, offsets)
        f_hi = irr_residual(hi, abatement_sens, amounts, offsets)
        if f_lo == 0:
            return lo
        if f_hi == 0:
            return hi
        if np.sign(f_lo) != np.sign(f_hi):
            return brentq(irr_residual, lo, hi, args=(abatement_sens, amounts, offsets),
                          xtol=xtol, maxiter=500)
    raise NoRootError(t_j, "residual does not change sign in the rate bracket")


@dataclass
class UtilityWeights:
    """R(t_j, t_k) = dV/dC(t_k) from cost bumps, and ratios R(t_j,t_k)/R(t_j,t_j)"""
    t_j: int
    t_k: np.ndarray
    weights: np.ndarray
    base: float

    @property
    def ratios(self):
        return self.weights / self.base


def marginal_welfare_of_cost(params, policy, periods, bump=DEFAULT_COST_BUMP, batch_rows=512):
    """dV(0)/dC(t_k) for each period by central cost bumps (negative numbers)"""
    mu = np.asarray(policy.mu, dtype=float)
    periods = np.asarray(periods, dtype=int)
    count = len(periods)
    rows = np.repeat(mu[np.newaxis, :], 2 * count, axis=0)
    cost_bumps = np.zeros((2 * count, params.n_periods))
    index = np.arange(count)
    cost_bumps[2 * index, periods] = bump
    cost_bumps[2 * index + 1, periods] = -bump
    try:
        values = evaluate_welfare_rows(params, rows, batch_rows=batch_rows, cost_bumps=cost_bumps)
    except DegenerateTrajectoryError as e:
        bad = getattr(e, 'rows', np.array([], dtype=int))
        period = int(periods[bad[0] // 2]) if len(bad) else e.period
        raise AnalyticsError(f"cost bump at period {period} failed: {e.reason}") from e
    return (values[0::2] - values[1::2]) / (2.0 * bump)


def utility_weights(params, policy, t_j, t_k_list, bump=DEFAULT_COST_BUMP):
    """
    Marginal-welfare weights R(t_j, t_k) for t_k >= t_j

    Returns:
        UtilityWeights
    """
    t_k = np.asarray(sorted(set(int(k) for k in t_k_list) | {int(t_j)}), dtype=int)
    if np.any(t_k < t_j) or np.any(t_k >= params.n_periods):
        raise AnalyticsError(f"t_k must satisfy {t_j} <= t_k < {params.n_periods}")
    weights = marginal_welfare_of_cost(params, policy, t_k, bump)
    base = float(weights[t_k == t_j][0])
    if base == 0:
        raise AnalyticsError(f"marginal welfare of cost vanishes at period {t_j}")
    return UtilityWeights(t_j=int(t_j), t_k=t_k, weights=weights, base=base)


def identity_check(params, policy, t_j, bump=DEFAULT_MU_BUMP, cost_bump=DEFAULT_COST_BUMP):
    """
    Both sides of the discounting identity at t_j

        sum_k dC(t_k)/dmu(t_j) * exp(-r_SCC (t_k - t_j))
            ~ sum_k dC(t_k)/dmu(t_j) * R(t_j, t_k) / R(t_j, t_j)

    The gap is measured relative to the principal |dC_A(t_j)/dmu(t_j)|.
    """
    sensitivities = cost_sensitivity_matrix(params, policy, [t_j], bump)
    principal = float(sensitivities.abatement[0])
    repayments = truncate_noise(sensitivities.damage_series(0))
    rate = irr_solve(principal, repayments, t_j, params.step_size)

    offsets = np.arange(params.n_periods - t_j) * params.step_size
    lhs = principal + float(np.sum(repayments * np.exp(-rate * offsets)))

    weights = utility_weights(params, policy, t_j, range(t_j, params.n_periods), cost_bump)
    total = sensitivities.total[0, t_j:]
    rhs = float(np.sum(total * weights.ratios))
    return {
        't_j': int(t_j),
        'r_scc': rate,
        'lhs': lhs,
        'rhs': rhs,
        'principal': principal,
        'relative_gap': abs(lhs - rhs) / abs(principal),
    }


@dataclass
class RateReport:
    periods: np.ndarray
    years: np.ndarray
    r_scc_curve: np.ndarray
    no_root: np.ndarray
    abatement_sensitivity: np.ndarray
    damage_sensitivities: np.ndarray
    discount_rate: float
    continuous_discount_rate: float
    utility_rate: np.ndarray
    marginal_utility_rate: np.ndarray
    stationarity_residual: np.ndarray
    utility_weights: UtilityWeights = None
    identity: dict = field(default_factory=dict)

    @property
    def financing_profitable(self):
        return np.where(self.no_root, False, self.r_scc_curve > self.discount_rate)

    @property
    def no_root_count(self):
        return int(np.sum(self.no_root))

    def early_average(self, count=10):
        """Mean r_SCC over the first `count` reported periods with a root"""
        head = self.r_scc_curve[:count][~self.no_root[:count]]
        return float(np.mean(head)) if head.size else float('nan')

    def to_frame(self):
        return pd.DataFrame({
            'period': self.periods,
            'year': self.years,
            'r_scc': self.r_scc_curve,
            'discount_rate': np.full(len(self.periods), self.discount_rate),
            'continuous_discount_rate': np.full(len(self.periods), self.continuous_discount_rate),
            'utility_rate': self.utility_rate,
            'marginal_utility_rate': self.marginal_utility_rate,
            'financing_profitable': self.financing_profitable.astype(int),
            'stationarity_residual': self.stationarity_residual,
            'no_root_flag': self.no_root.astype(int),
        })


def _weight_periods(params, t_j):
    offsets = (0, 1, 2, 5, 10, 20, 50, 100, 200)
    return [t_j + int(round(o / params.step_size)) for o in offsets
            if t_j + int(round(o / params.step_size)) < params.n_periods]


def r_scc_curve(params, policy, periods=None, bump=DEFAULT_MU_BUMP, batch_rows=128,
                trajectory=None, with_identity=True):
    """
    r_SCC(t_j) for each period in `periods` (all periods by default)

    Periods without a root are flagged and reported as NaN.

    Returns:
        RateReport
    """
    n = params.n_periods
    periods = np.arange(n) if periods is None else np.asarray(sorted(set(int(p) for p in periods)))
    if periods.size == 0 or periods[0] < 0 or periods[-1] >= n:
        raise AnalyticsError(f"rate periods must lie in 0..{n - 1}")
    trajectory = trajectory if trajectory is not None else simulate(params, policy)

    sensitivities = cost_sensitivity_matrix(params, policy, periods, bump, batch_rows)
    rates = np.full(len(periods), np.nan)
    no_root = np.zeros(len(periods), dtype=bool)
    for index, j in enumerate(periods):
        repayments = truncate_noise(sensitivities.damage_series(index))
        try:
            rates[index] = irr_solve(sensitivities.abatement[index], repayments, int(j), params.step_size)
        except NoRootError as e:
            logger.debug("%s", e)
            no_root[index] = True
    if no_root.any():
        logger.warning("No IRR root for %d of %d periods", int(no_root.sum()), len(periods))

    rows, up, down = bumped_mu(params, np.asarray(policy.mu, dtype=float), periods, bump)
    values = evaluate_welfare_rows(params, rows, batch_rows=max(batch_rows, 2))
    stationarity = (values[0::2] - values[1::2]) / (up - down)

    r = params.numeraire_rate
    dt = params.step_size
    weights = None
    identity = {}
    if with_identity:
        t_j = int(periods[0])
        weights = utility_weights(params, policy, t_j, _weight_periods(params, t_j))
        try:
            identity = identity_check(params, policy, t_j, bump)
        except NoRootError as e:
            logger.warning("Identity check skipped: %s", e)

    return RateReport(
        periods=periods,
        years=trajectory.years[periods],
        r_scc_curve=rates,
        no_root=no_root,
        abatement_sensitivity=sensitivities.abatement,
        damage_sensitivities=sensitivities.damage,
        discount_rate=r,
        continuous_discount_rate=math.log1p(r * dt) / dt,
        utility_rate=np.full(len(periods), params.utility.prstp),
        marginal_utility_rate=marginal_utility_rate(trajectory, params)[periods],
        stationarity_residual=stationarity,
        utility_weights=weights,
        identity=identity,
    )
