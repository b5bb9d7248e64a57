"""
DICE Climate-Economy Engine

Deterministic forward simulation of the DICE-2016 difference equations on
the annual grid: three-reservoir carbon cycle, two-box temperature,
Cobb-Douglas economy with a fixed savings path, quadratic damages and a
power-law abatement cost.

Every function here is pure. The simulation loop is vectorised over a batch
dimension (rows = independent scenarios), so finite-difference bumps of many
coordinates run as one pass instead of many separate simulations.
"""
import logging
from dataclasses import dataclass, fields

import numpy as np
import pandas as pd

from services.errors import ConfigError, DegenerateTrajectoryError
from services.parameters import CO2_PER_CARBON, annual_paths, numeraire_path

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClimateEconomyState:
    """Carbon masses (GtC), temperature anomalies (C) and capital ($T)

    Fields are floats for a single run or 1-d arrays for a batch.
    """
    m_atm: object
    m_upper: object
    m_lower: object
    t_atm: object
    t_lower: object
    capital: object

    @classmethod
    def initial(cls, params, batch=None):
        cc = params.carbon_cycle
        cl = params.climate
        values = (cc.mat0, cc.mu0, cc.ml0, cl.tatm0, cl.tocean0, params.economy.k0)
        if batch is not None:
            values = tuple(np.full(batch, v, dtype=float) for v in values)
        return cls(*values)

    @property
    def total_carbon(self):
        return self.m_atm + self.m_upper + self.m_lower

    def invalid_rows(self):
        """Boolean mask of rows violating the state invariants"""
        masses = (np.asarray(self.m_atm), np.asarray(self.m_upper), np.asarray(self.m_lower))
        bad = ~np.isfinite(np.asarray(self.capital)) | (np.asarray(self.capital) <= 0)
        for m in masses:
            bad |= ~np.isfinite(m) | (m <= 0)
        bad |= ~np.isfinite(np.asarray(self.t_atm)) | ~np.isfinite(np.asarray(self.t_lower))
        return np.atleast_1d(bad)


@dataclass
class AbatementPolicy:
    """Abatement fraction mu(t_i), one value per model period"""
    mu: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)

    def __len__(self):
        return len(self.mu)

    @classmethod
    def constant(cls, params, value):
        return cls(np.full(params.n_periods, float(value)))

    @classmethod
    def full_abatement(cls, params):
        """mu = 1 from the first period on (capped at max_abatement)"""
        return cls.constant(params, min(1.0, params.max_abatement))

    @classmethod
    def ramp(cls, params, start=0.03, end=1.0, years=150.0):
        """Linear ramp from start to end over the given number of years, flat after"""
        times = np.arange(params.n_periods) * params.step_size
        share = np.clip(times / years, 0.0, 1.0) if years > 0 else np.ones_like(times)
        mu = start + share * (end - start)
        return cls(np.clip(mu, 0.0, params.max_abatement))

    def clipped(self, params):
        return AbatementPolicy(np.clip(self.mu, 0.0, params.max_abatement))

    def violations(self, params):
        problems = []
        if len(self.mu) != params.n_periods:
            problems.append(f"policy.mu: length {len(self.mu)} does not match "
                            f"{params.n_periods} model periods")
        if not np.all(np.isfinite(self.mu)):
            problems.append("policy.mu: values must be finite")
        elif np.any(self.mu < 0) or np.any(self.mu > params.max_abatement):
            problems.append(f"policy.mu: values must lie in [0, {params.max_abatement}]")
        return problems

    def check(self, params):
        problems = self.violations(params)
        if problems:
            raise ConfigError(problems)
        return self


@dataclass(frozen=True)
class PeriodOutputs:
    """One row of a trajectory (floats, or arrays over the batch)"""
    emissions: object               # GtCO2/yr
    industrial_emissions: object
    land_use_emissions: object
    gross_output: object            # $T/yr
    abatement_cost: object
    damage_cost: object
    total_cost: object
    net_output: object
    investment: object
    consumption: object
    consumption_per_capita: object  # thousand $ per person per year
    utility: object
    damage_fraction: object
    carbon_price: object            # marginal abatement cost, $/tCO2
    population: object
    forcing: object                 # W/m2 at the start of the period
    floor_bound: object


SERIES_FIELDS = tuple(f.name for f in fields(PeriodOutputs) if f.name != 'floor_bound')
STATE_FIELDS = tuple(f.name for f in fields(ClimateEconomyState))


@dataclass
class Trajectory:
    """
    Per-period series aligned to the model grid

    Series are 1-d for a single run and 2-d (batch, period) for a batch.
    State fields hold the state at the start of each period.
    """
    step_size: float
    years: np.ndarray
    numeraire: np.ndarray
    mu: np.ndarray
    emissions: np.ndarray
    industrial_emissions: np.ndarray
    land_use_emissions: np.ndarray
    gross_output: np.ndarray
    abatement_cost: np.ndarray
    damage_cost: np.ndarray
    total_cost: np.ndarray
    net_output: np.ndarray
    investment: np.ndarray
    consumption: np.ndarray
    consumption_per_capita: np.ndarray
    utility: np.ndarray
    damage_fraction: np.ndarray
    carbon_price: np.ndarray
    population: np.ndarray
    forcing: np.ndarray
    m_atm: np.ndarray
    m_upper: np.ndarray
    m_lower: np.ndarray
    t_atm: np.ndarray
    t_lower: np.ndarray
    capital: np.ndarray

    # Short names used in the pricing formulas
    @property
    def E(self):
        return self.emissions

    @property
    def Y(self):
        return self.gross_output

    @property
    def C_A(self):
        return self.abatement_cost

    @property
    def C_D(self):
        return self.damage_cost

    @property
    def C(self):
        return self.total_cost

    @property
    def Z(self):
        return self.consumption

    @property
    def U(self):
        return self.utility

    @property
    def N(self):
        return self.numeraire

    @property
    def n_periods(self):
        return self.emissions.shape[-1]

    def __len__(self):
        return self.n_periods

    @property
    def horizon_years(self):
        return self.n_periods * self.step_size

    def row(self, index):
        """Single-run trajectory for one row of a batch"""
        values = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, np.ndarray) and value.ndim == 2:
                value = value[index].copy()
            values[f.name] = value
        return Trajectory(**values)

    def to_frame(self):
        """Per-period table (single run only)"""
        frame = pd.DataFrame({
            'period': np.arange(self.n_periods),
            'year': self.years,
            'numeraire': self.numeraire,
            'mu': self.mu,
        })
        for name in SERIES_FIELDS + STATE_FIELDS:
            frame[name] = getattr(self, name)
        return frame


def numeraire(params, t):
    """
    Value of the risk-free account N(t) at grid time t (years)

    One step of length dt multiplies by (1 + r * dt), so N(0) = 1 and
    N(k * dt) = (1 + r * dt) ** k.
    """
    dt = params.step_size
    return (1.0 + params.numeraire_rate * dt) ** (np.asarray(t, dtype=float) / dt)


def utility_of_consumption(c, elasmu):
    """CRRA felicity of per-capita consumption (thousand $)"""
    if elasmu == 1.0:
        return np.log(c)
    return (c ** (1.0 - elasmu) - 1.0) / (1.0 - elasmu)


def step(state, params, mu_i, period_index, paths=None, emission_bump=0.0,
         consumption_bump=0.0, cost_bump=0.0, consumption_floor=None, coefficients=None):
    """
    Advance the climate-economy state by one model step

    Args:
        state: ClimateEconomyState at the start of the period
        params: ModelParameters
        mu_i: abatement fraction for this period (float or batch array)
        period_index: index i of the period, 0 <= i < n_periods
        paths: ExogenousPaths (built from params when omitted)
        emission_bump: GtCO2/yr added to this period's emissions
        consumption_bump: $T/yr added to consumption after costs
        cost_bump: $T/yr added to the cost charged against output
        consumption_floor: per-capita floor (thousand $); None means no floor
        coefficients: (carbon matrix, temperature A, temperature b) cache

    Returns:
        (next_state, PeriodOutputs)
    """
    if not 0 <= period_index < params.n_periods:
        raise IndexError(f"period_index {period_index} outside 0..{params.n_periods - 1}")
    if paths is None:
        paths = annual_paths(params)
    if coefficients is None:
        coefficients = (params.carbon_cycle_matrix,) + tuple(params.temperature_coefficients)
    phi, temp_a, temp_b = coefficients

    i = period_index
    dt = params.step_size
    eco = params.economy
    dam = params.damages
    aba = params.abatement
    mu_i = np.asarray(mu_i, dtype=float) if np.ndim(mu_i) else float(mu_i)

    population = paths.population[i]
    gross_output = paths.tfp[i] * (population / 1000.0) ** (1.0 - eco.gama) * state.capital ** eco.gama

    industrial = paths.sigma[i] * gross_output * (1.0 - mu_i)
    land_use = paths.land_use[i]
    emissions = industrial + land_use + emission_bump

    damage_fraction = dam.a1 * state.t_atm + dam.a2 * np.abs(state.t_atm) ** dam.a3
    damage_cost = gross_output * damage_fraction
    abatement_cost = gross_output * paths.abatement_coefficient[i] * mu_i ** aba.expcost2
    total_cost = abatement_cost + damage_cost
    carbon_price = paths.backstop[i] * mu_i ** (aba.expcost2 - 1.0)

    net_output = gross_output - total_cost - cost_bump
    savings = paths.savings[i]
    investment = savings * net_output
    consumption = (1.0 - savings) * net_output + consumption_bump

    per_capita = 1000.0 * consumption / population
    if consumption_floor is None:
        floor_bound = np.zeros(np.shape(per_capita), dtype=bool)
        bad = ~(np.asarray(per_capita) > 0)
        if np.any(bad):
            raise _degenerate(i, "consumption is not positive", bad)
    else:
        floor_bound = per_capita < consumption_floor
        per_capita = np.maximum(per_capita, consumption_floor)
    utility = params.utility.scale * population * utility_of_consumption(
        per_capita, params.utility.elasmu)

    forcing = (params.climate.fco22x * np.log(state.m_atm / params.climate.preindustrial_mat)
               / np.log(2.0) + paths.forcing_other[i])

    # Carbon cycle: column-stochastic transfer plus injected emissions
    injected = emissions * dt / CO2_PER_CARBON
    m_atm = phi[0, 0] * state.m_atm + phi[0, 1] * state.m_upper + phi[0, 2] * state.m_lower + injected
    m_upper = phi[1, 0] * state.m_atm + phi[1, 1] * state.m_upper + phi[1, 2] * state.m_lower
    m_lower = phi[2, 0] * state.m_atm + phi[2, 1] * state.m_upper + phi[2, 2] * state.m_lower

    forcing_next = (params.climate.fco22x * np.log(m_atm / params.climate.preindustrial_mat)
                    / np.log(2.0) + paths.forcing_other[i + 1])
    t_atm = temp_a[0, 0] * state.t_atm + temp_a[0, 1] * state.t_lower + temp_b[0] * forcing_next
    t_lower = temp_a[1, 0] * state.t_atm + temp_a[1, 1] * state.t_lower + temp_b[1] * forcing_next

    capital = (1.0 - eco.dk) ** dt * state.capital + dt * investment

    next_state = ClimateEconomyState(m_atm, m_upper, m_lower, t_atm, t_lower, capital)
    outputs = PeriodOutputs(
        emissions=emissions,
        industrial_emissions=industrial,
        land_use_emissions=land_use + np.zeros_like(industrial),
        gross_output=gross_output,
        abatement_cost=abatement_cost,
        damage_cost=damage_cost,
        total_cost=total_cost,
        net_output=net_output,
        investment=investment,
        consumption=consumption,
        consumption_per_capita=per_capita,
        utility=utility,
        damage_fraction=damage_fraction,
        carbon_price=carbon_price,
        population=population + np.zeros_like(industrial),
        forcing=forcing,
        floor_bound=floor_bound,
    )

    bad = ~np.isfinite(np.atleast_1d(utility)) | next_state.invalid_rows()
    if np.any(bad):
        raise _degenerate(i, "non-finite utility or invalid next state", bad)
    return next_state, outputs


def _degenerate(period, reason, bad_mask):
    error = DegenerateTrajectoryError(period, reason)
    error.rows = np.flatnonzero(np.atleast_1d(bad_mask))
    return error


def _as_matrix(values, batch, n, name):
    if values is None:
        return None
    matrix = np.asarray(values, dtype=float)
    if matrix.ndim == 1:
        matrix = np.broadcast_to(matrix, (batch, n))
    if matrix.shape != (batch, n):
        raise ValueError(f"{name} must have shape ({batch}, {n}), got {matrix.shape}")
    return matrix


def _run(params, mu_matrix, emission_bumps=None, consumption_bumps=None,
         cost_bumps=None, record=True):
    n = params.n_periods
    mu_matrix = np.atleast_2d(np.asarray(mu_matrix, dtype=float))
    batch = mu_matrix.shape[0]
    if mu_matrix.shape[1] != n:
        raise ConfigError(f"policy.mu: length {mu_matrix.shape[1]} does not match {n} model periods")

    emission_bumps = _as_matrix(emission_bumps, batch, n, 'emission_bumps')
    consumption_bumps = _as_matrix(consumption_bumps, batch, n, 'consumption_bumps')
    cost_bumps = _as_matrix(cost_bumps, batch, n, 'cost_bumps')

    paths = annual_paths(params)
    coefficients = (params.carbon_cycle_matrix,) + tuple(params.temperature_coefficients)
    dt = params.step_size
    discount = dt / paths.numeraire[:n]

    state = ClimateEconomyState.initial(params, batch=batch)
    welfare = np.zeros(batch)
    floor = None
    floor_hits = np.zeros(batch, dtype=int)
    series = {name: np.empty((batch, n)) for name in SERIES_FIELDS + STATE_FIELDS} if record else None

    for i in range(n):
        if record:
            for name in STATE_FIELDS:
                series[name][:, i] = getattr(state, name)
        next_state, out = step(
            state, params, mu_matrix[:, i], i, paths,
            emission_bump=0.0 if emission_bumps is None else emission_bumps[:, i],
            consumption_bump=0.0 if consumption_bumps is None else consumption_bumps[:, i],
            cost_bump=0.0 if cost_bumps is None else cost_bumps[:, i],
            consumption_floor=floor,
            coefficients=coefficients,
        )
        if floor is None:
            floor = params.utility.consumption_floor_ratio * out.consumption_per_capita
        floor_hits += out.floor_bound
        if np.any(floor_hits > 1):
            raise _degenerate(i, "consumption floor binds in more than one period", floor_hits > 1)

        welfare += out.utility * discount[i]
        if record:
            for name in SERIES_FIELDS:
                series[name][:, i] = getattr(out, name)
        state = next_state

    if not record:
        return welfare

    return Trajectory(
        step_size=dt,
        years=paths.years[:n].copy(),
        numeraire=paths.numeraire[:n].copy(),
        mu=mu_matrix.copy(),
        **series,
    )


def simulate_batch(params, mu_matrix, emission_bumps=None, consumption_bumps=None, cost_bumps=None):
    """
    Simulate many scenarios in one vectorised pass

    Args:
        mu_matrix: (batch, n_periods) abatement fractions
        emission_bumps / consumption_bumps / cost_bumps: optional
            (batch, n_periods) additive bumps in GtCO2/yr and $T/yr

    Returns:
        Trajectory with (batch, n_periods) series
    """
    return _run(params, mu_matrix, emission_bumps, consumption_bumps, cost_bumps, record=True)


def batch_welfare(params, mu_matrix, emission_bumps=None, consumption_bumps=None, cost_bumps=None):
    """Welfare V(0) for every row of a batch, without recording series"""
    return _run(params, mu_matrix, emission_bumps, consumption_bumps, cost_bumps, record=False)


def simulate(params, policy):
    """
    Forward-simulate the model under an abatement policy

    Returns:
        Trajectory with 1-d series over the model grid
    """
    if not isinstance(policy, AbatementPolicy):
        policy = AbatementPolicy(policy)
    policy.check(params)
    return simulate_batch(params, policy.mu[np.newaxis, :]).row(0)


def welfare(trajectory):
    """
    Discounted-utility objective V(0) = sum U(t_i) * N(0) / N(t_i) * dt

    Returns a float for a single run, an array for a batch trajectory.
    """
    utility = np.asarray(trajectory.utility)
    if not np.all(np.isfinite(utility)):
        flat = np.atleast_2d(utility)
        period = int(np.argmax(~np.isfinite(flat).all(axis=0)))
        raise DegenerateTrajectoryError(period, "non-finite utility")
    value = (utility / trajectory.numeraire).sum(axis=-1) * trajectory.step_size
    return float(value) if np.ndim(value) == 0 else value


def marginal_utility_rate(trajectory, params):
    """
    Rate at which marginal utility of per-capita consumption declines,
    elasmu * d log c / dt (last period repeats the previous value)
    """
    c = np.asarray(trajectory.consumption_per_capita)
    growth = np.diff(np.log(c)) / trajectory.step_size
    growth = np.append(growth, growth[-1] if len(growth) else 0.0)
    return params.utility.elasmu * growth
