"""
Model Parameters

DICE-2016R parameter set, re-discretised from the native 5-year grid to the
annual grid used by the pricing analytics.

Parameter sets:
- dice2016-annual: DICE-2016R calibration, dt = 1 year, 500 years,
  numeraire rate 1.5% (annual linear compounding)

The parameter file is TOML with one section per model block
([time], [carbon_cycle], [climate], [economy], [emissions], [damages],
[abatement], [utility]). Values keep the native DICE units:
carbon in GtC, emissions in GtCO2/yr, money in trillions of 2010 USD.
"""
import hashlib
import logging
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from scipy.linalg import fractional_matrix_power

from services.errors import ConfigError

logger = logging.getLogger(__name__)

CONFIG_DIR = Path(__file__).parent.parent / "config"

# GtCO2 per GtC
CO2_PER_CARBON = 44.0 / 12.0

# $/tCO2 per ($T / GtCO2)
PRICE_UNIT = 1000.0


# Parameter set registry
PARAMETER_SETS = {
    'dice2016-annual': {
        'id': 'dice2016-annual',
        'display_name': 'DICE-2016R (annual)',
        'description': 'DICE-2016R calibration, 1-year steps, 500 years, 1.5% numeraire',
        'file': CONFIG_DIR / 'dice2016-annual.toml',
    },
}

DEFAULT_PARAMETER_SET = 'dice2016-annual'


def get_parameter_set(set_id):
    """Registry entry for a parameter set, or None for a set loaded from its own file"""
    return PARAMETER_SETS.get(set_id)


class _Section(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)


class TimeParameters(_Section):
    time_horizon_years: int = Field(500, ge=1)
    step_size: float = Field(1.0, gt=0)
    numeraire_rate: float = Field(0.015, ge=0)
    start_year: int = 2015


class CarbonCycleParameters(_Section):
    """Three-reservoir carbon cycle (atmosphere, upper ocean, lower ocean)"""
    mat0: float = Field(851.0, gt=0)        # GtC, atmosphere 2015
    mu0: float = Field(460.0, gt=0)         # GtC, upper ocean 2015
    ml0: float = Field(1740.0, gt=0)        # GtC, lower ocean 2015
    mateq: float = Field(588.0, gt=0)
    mueq: float = Field(360.0, gt=0)
    mleq: float = Field(1720.0, gt=0)
    b12: float = Field(0.12, gt=0, lt=1)    # per native step
    b23: float = Field(0.007, gt=0, lt=1)   # per native step
    native_step: float = Field(5.0, gt=0)

    @model_validator(mode='after')
    def _check_flows(self):
        b21 = self.b12 * self.mateq / self.mueq
        if 1.0 - b21 - self.b23 <= 0:
            raise ValueError("upper-ocean retention b22 = 1 - b21 - b23 must be positive")
        return self


class ClimateParameters(_Section):
    """Two-box temperature model and radiative forcing"""
    t2xco2: float = Field(3.1, gt=0)        # equilibrium climate sensitivity (C)
    fco22x: float = Field(3.6813, gt=0)     # forcing of CO2 doubling (W/m2)
    c1: float = Field(0.1005, gt=0, lt=1)
    c3: float = Field(0.088, ge=0)
    c4: float = Field(0.025, ge=0, lt=1)
    tatm0: float = 0.85
    tocean0: float = 0.0068
    fex0: float = 0.5                       # non-CO2 forcing 2015 (W/m2)
    fex1: float = 1.0                       # non-CO2 forcing 2100 (W/m2)
    forcing_ramp_years: float = Field(85.0, gt=0)
    preindustrial_mat: float = Field(588.0, gt=0)
    native_step: float = Field(5.0, gt=0)


class EconomyParameters(_Section):
    k0: float = Field(223.0, gt=0)          # $T
    pop0: float = Field(7403.0, gt=0)       # millions
    popasym: float = Field(11500.0, gt=0)
    popadj: float = Field(0.134, ge=0)      # per native step
    a0: float = Field(5.115, gt=0)
    ga0: float = 0.076                      # TFP growth per native step
    dela: float = Field(0.005, ge=0)        # per year
    gama: float = Field(0.300, gt=0, lt=1)  # capital elasticity
    dk: float = Field(0.100, gt=0, lt=1)    # depreciation per year
    savings_rate: float = Field(0.259029014481802, gt=0, lt=1)
    savings_rate_final: float = Field(0.02, gt=0, lt=1)
    savings_taper_start: float = Field(100.0, ge=0)   # years
    savings_taper_end: float = Field(300.0, ge=0)

    @model_validator(mode='after')
    def _check_taper(self):
        if self.savings_taper_end < self.savings_taper_start:
            raise ValueError("savings_taper_end must not precede savings_taper_start")
        return self


class EmissionsParameters(_Section):
    e0: float = Field(35.85, ge=0)          # industrial emissions 2015 (GtCO2/yr)
    q0: float = Field(105.5, gt=0)          # gross output 2015 ($T)
    miu0: float = Field(0.03, ge=0, lt=1)   # abatement used for sigma0
    gsigma1: float = -0.0152                # initial growth of sigma (per year)
    dsig: float = -0.001                    # decline of decarbonisation (per year)
    eland0: float = Field(2.6, ge=0)        # land-use emissions 2015 (GtCO2/yr)
    deland: float = Field(0.115, ge=0, lt=1)  # per native step
    native_step: float = Field(5.0, gt=0)


class DamageParameters(_Section):
    a1: float = Field(0.0, ge=0)
    a2: float = Field(0.00236, ge=0)
    a3: float = Field(2.0, gt=0)


class AbatementParameters(_Section):
    pback: float = Field(550.0, ge=0)       # backstop price 2015 ($/tCO2)
    gback: float = Field(0.025, ge=0, lt=1)  # decline per native step
    expcost2: float = Field(2.6, gt=1)
    max_abatement: float = Field(1.0, gt=0)
    native_step: float = Field(5.0, gt=0)


class UtilityParameters(_Section):
    elasmu: float = Field(1.45, ge=0)       # elasticity of marginal utility
    prstp: float = Field(0.015, ge=0)       # pure rate of time preference
    scale: float = Field(0.0302455265681763, gt=0)
    consumption_floor_ratio: float = Field(1e-6, gt=0, lt=1)


class ModelParameters(_Section):
    """Full parameter set of the annual DICE engine"""
    name: str = DEFAULT_PARAMETER_SET
    time: TimeParameters = TimeParameters()
    carbon_cycle: CarbonCycleParameters = CarbonCycleParameters()
    climate: ClimateParameters = ClimateParameters()
    economy: EconomyParameters = EconomyParameters()
    emissions: EmissionsParameters = EmissionsParameters()
    damages: DamageParameters = DamageParameters()
    abatement: AbatementParameters = AbatementParameters()
    utility: UtilityParameters = UtilityParameters()

    @property
    def n_periods(self):
        return max(1, int(round(self.time.time_horizon_years / self.time.step_size)))

    @property
    def step_size(self):
        return self.time.step_size

    @property
    def numeraire_rate(self):
        return self.time.numeraire_rate

    @property
    def max_abatement(self):
        return self.abatement.max_abatement

    @property
    def sigma0(self):
        """Initial carbon intensity (GtCO2 per $T output)"""
        e = self.emissions
        return e.e0 / (e.q0 * (1.0 - e.miu0))

    def native_carbon_matrix(self):
        """Carbon transfer matrix per native step; M(next) = Phi @ M"""
        cc = self.carbon_cycle
        b11 = 1.0 - cc.b12
        b21 = cc.b12 * cc.mateq / cc.mueq
        b22 = 1.0 - b21 - cc.b23
        b32 = cc.b23 * cc.mueq / cc.mleq
        b33 = 1.0 - b32
        return np.array([
            [b11, b21, 0.0],
            [cc.b12, b22, b32],
            [0.0, cc.b23, b33],
        ])

    @property
    def carbon_cycle_matrix(self):
        """Carbon transfer matrix per model step (columns sum to one)"""
        native = self.native_carbon_matrix()
        power = self.step_size / self.carbon_cycle.native_step
        phi = native if power == 1.0 else np.real(fractional_matrix_power(native, power))
        phi = np.array(phi, dtype=float)
        # Mass conservation: each column sums to exactly one
        for j in range(3):
            phi[j, j] = 1.0 - (phi[:, j].sum() - phi[j, j])
        return phi

    def native_temperature_coefficients(self):
        cl = self.climate
        lam = cl.fco22x / cl.t2xco2
        a = np.array([
            [1.0 - cl.c1 * (lam + cl.c3), cl.c1 * cl.c3],
            [cl.c4, 1.0 - cl.c4],
        ])
        b = np.array([cl.c1, 0.0])
        return a, b

    @property
    def temperature_coefficients(self):
        """(A, b) per model step with T(next) = A @ T + b * forcing(next)

        A is the matching fractional power of the native matrix; b keeps the
        equilibrium response to constant forcing unchanged.
        """
        a_native, b_native = self.native_temperature_coefficients()
        power = self.step_size / self.climate.native_step
        if power == 1.0:
            return a_native, b_native
        a = np.real(fractional_matrix_power(a_native, power))
        eye = np.eye(2)
        b = (eye - a) @ np.linalg.solve(eye - a_native, b_native)
        return np.array(a, dtype=float), b

    def fingerprint(self):
        """Stable hash of every parameter value (cache key)"""
        return hashlib.sha256(self.model_dump_json().encode('utf-8')).hexdigest()


@dataclass(frozen=True)
class ExogenousPaths:
    """Exogenous series on the model grid (n_periods + 1 points)"""
    years: np.ndarray
    times: np.ndarray
    population: np.ndarray
    tfp: np.ndarray
    sigma: np.ndarray
    backstop: np.ndarray
    land_use: np.ndarray
    forcing_other: np.ndarray
    savings: np.ndarray
    abatement_coefficient: np.ndarray   # theta1 = backstop * sigma / expcost2 / 1000
    numeraire: np.ndarray


def _geometric_interp(x, path):
    """Interpolate a native-step path log-linearly (linearly if it touches zero)"""
    grid = np.arange(len(path), dtype=float)
    if np.all(path > 0):
        return np.exp(np.interp(x, grid, np.log(path)))
    return np.interp(x, grid, path)


def numeraire_path(params, n_points=None):
    """N(t_i) on the grid: linear compounding per step, N(0) = 1"""
    n_points = params.n_periods + 1 if n_points is None else n_points
    growth = 1.0 + params.numeraire_rate * params.step_size
    return growth ** np.arange(n_points, dtype=float)


def annual_paths(params):
    """Build the exogenous paths on the model grid from the native DICE recursions"""
    dt = params.step_size
    n_points = params.n_periods + 1
    times = np.arange(n_points, dtype=float) * dt

    eco = params.economy
    emi = params.emissions
    aba = params.abatement

    native_step = emi.native_step
    n_native = int(math.ceil(times[-1] / native_step)) + 2

    population = np.empty(n_native)
    tfp = np.empty(n_native)
    sigma = np.empty(n_native)
    gsig = np.empty(n_native)
    population[0] = eco.pop0
    tfp[0] = eco.a0
    sigma[0] = params.sigma0
    gsig[0] = emi.gsigma1
    for i in range(n_native - 1):
        population[i + 1] = population[i] * (eco.popasym / population[i]) ** eco.popadj
        ga = eco.ga0 * math.exp(-eco.dela * native_step * i)
        tfp[i + 1] = tfp[i] / (1.0 - ga)
        gsig[i + 1] = gsig[i] * (1.0 + emi.dsig) ** native_step
        sigma[i + 1] = sigma[i] * math.exp(gsig[i] * native_step)

    index = np.arange(n_native, dtype=float)
    backstop = aba.pback * (1.0 - aba.gback) ** index
    land_use = emi.eland0 * (1.0 - emi.deland) ** index

    x = times / native_step
    cl = params.climate
    forcing_other = cl.fex0 + (cl.fex1 - cl.fex0) * np.minimum(times / cl.forcing_ramp_years, 1.0)

    savings = np.full(n_points, eco.savings_rate)
    if eco.savings_taper_end > eco.savings_taper_start:
        share = np.clip((times - eco.savings_taper_start)
                        / (eco.savings_taper_end - eco.savings_taper_start), 0.0, 1.0)
        savings = eco.savings_rate + share * (eco.savings_rate_final - eco.savings_rate)
    elif eco.savings_taper_end > 0:
        savings = np.where(times >= eco.savings_taper_end, eco.savings_rate_final, savings)

    sigma_grid = _geometric_interp(x, sigma)
    backstop_grid = _geometric_interp(x, backstop)

    paths = ExogenousPaths(
        years=params.time.start_year + times,
        times=times,
        population=_geometric_interp(x, population),
        tfp=_geometric_interp(x, tfp),
        sigma=sigma_grid,
        backstop=backstop_grid,
        land_use=_geometric_interp(x, land_use),
        forcing_other=forcing_other,
        savings=savings,
        abatement_coefficient=backstop_grid * sigma_grid / aba.expcost2 / 1000.0,
        numeraire=numeraire_path(params, n_points),
    )

    negative = [name for name in ('population', 'tfp', 'sigma', 'backstop', 'land_use')
                if np.any(getattr(paths, name) < 0) or not np.all(np.isfinite(getattr(paths, name)))]
    if negative:
        raise ConfigError([f"{name}: path must be finite and non-negative for every period"
                           for name in negative])
    return paths


def apply_overrides(raw, overrides):
    """Set dotted keys ("time.numeraire_rate") in a nested dict, returning a copy"""
    result = _deep_copy(raw)
    for dotted, value in (overrides or {}).items():
        node = result
        parts = dotted.split('.')
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{dotted}: '{part}' is not a section")
        node[parts[-1]] = value
    return result


def _deep_copy(raw):
    return {k: _deep_copy(v) if isinstance(v, dict) else v for k, v in raw.items()}


def format_validation_error(error, prefix=''):
    """Turn a pydantic ValidationError into 'field: rule' violation strings"""
    violations = []
    for item in error.errors():
        loc = '.'.join(str(part) for part in item['loc'])
        field = f"{prefix}{loc}" if loc else prefix.rstrip('.') or 'config'
        violations.append(f"{field}: {item['msg']}")
    return violations


def read_parameter_file(path):
    """Read the raw TOML dict of a parameter file"""
    path = Path(path)
    try:
        with open(path, 'rb') as f:
            return tomllib.load(f)
    except OSError as e:
        raise ConfigError(f"parameter_file: I/O error reading {path}: {e}")
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"parameter_file: cannot parse {path}: {e}")


def parameters_from_dict(raw):
    try:
        return ModelParameters.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(format_validation_error(e))


def override_parameters(params, overrides):
    """Copy of params with {dotted.key: value} applied and re-validated"""
    return parameters_from_dict(apply_overrides(params.model_dump(), overrides))


def load_parameters(path=None, overrides=None):
    """
    Load and validate a parameter file

    Args:
        path: TOML parameter file, defaults to the dice2016-annual set
        overrides: optional {dotted.key: value} applied before validation

    Returns:
        ModelParameters
    """
    if path is None:
        path = get_parameter_set(DEFAULT_PARAMETER_SET)['file']
    raw = apply_overrides(read_parameter_file(path), overrides)
    params = parameters_from_dict(raw)
    logger.debug("Loaded parameter set '%s' from %s", params.name, path)
    return params
