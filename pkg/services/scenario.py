"""
Scenario Runner

Loads a scenario config, obtains the abatement policy (calibrated or loaded
from policy.csv), runs the pricing and rate analytics and writes the report
bundle. Every engine error is mapped to its exit code:

    0 ok, 2 config, 3 calibration, 4 analytics, 5 I/O
"""
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from data.policy_cache import fetch_calibrated_policy, load_policy_csv, save_policy_csv
from data.report_export import write_report_bundle
from services.carbon_pricing import compute_price_report
from services.carbon_rate import r_scc_curve
from services.dice_model import simulate
from services.errors import CalibrationError, ConfigError, DegenerateTrajectoryError, DiceError
from services.parameters import (
    CONFIG_DIR,
    DEFAULT_PARAMETER_SET,
    apply_overrides,
    format_validation_error,
    get_parameter_set,
    load_parameters,
)
from services.policy_optimizer import OptimizerSettings

load_dotenv()

logger = logging.getLogger(__name__)

PROJECT_ROOT = CONFIG_DIR.parent
DEFAULT_SCENARIO_FILE = CONFIG_DIR / 'scenario.toml'
DEFAULT_OUTPUT_DIR = 'reports'


class _Section(BaseModel):
    model_config = ConfigDict(extra='forbid')


class PolicySource(_Section):
    source: Literal['calibrate', 'load'] = 'calibrate'
    path: Optional[str] = None

    @model_validator(mode='after')
    def _one_source(self):
        if self.source == 'load' and not self.path:
            raise ValueError("source 'load' needs a policy path")
        if self.source == 'calibrate' and self.path:
            raise ValueError("a policy path is only allowed with source 'load'")
        return self


class AnalyticsSettings(_Section):
    prices: bool = True
    rates: bool = True
    horizons: list[float] = Field(default_factory=lambda: [50, 100, 150, 200, 250, 300,
                                                           350, 400, 450, 500])
    scc_emission_bump: float = Field(1.0, gt=0)
    scc_consumption_bump: float = Field(0.01, gt=0)
    scc_convergence_check: bool = True
    rate_periods: int = Field(100, ge=1)
    rate_bump: float = Field(1e-4, gt=0, le=1e-3)
    batch_rows: int = Field(256, ge=2)


class ScenarioConfig(_Section):
    parameter_file: Optional[str] = None
    policy: PolicySource = PolicySource()
    optimizer: OptimizerSettings = OptimizerSettings()
    analytics: AnalyticsSettings = AnalyticsSettings()
    output_dir: Optional[str] = None
    use_cache: bool = True
    # Nested overrides of the parameter file, e.g. {"time": {"numeraire_rate": 0.02}}
    parameters: dict = Field(default_factory=dict)


@dataclass
class ScenarioResult:
    exit_code: int
    message: str = ""
    output_dir: Optional[Path] = None
    files: list = field(default_factory=list)
    calibration: object = None
    cache_hit: bool = False
    prices: object = None
    rates: object = None


def resolve_path(path):
    """Relative paths resolve against the working directory, then the project root"""
    path = Path(path)
    if path.is_absolute() or path.exists():
        return path
    candidate = PROJECT_ROOT / path
    return candidate if candidate.exists() else path


def parameter_file(config):
    if config.parameter_file:
        return resolve_path(config.parameter_file)
    return get_parameter_set(DEFAULT_PARAMETER_SET)['file']


def flatten_overrides(nested, prefix=""):
    """{"time": {"step_size": 1}} -> {"time.step_size": 1}"""
    flat = {}
    for key, value in nested.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten_overrides(value, f"{name}."))
        else:
            flat[name] = value
    return flat


def scenario_parameters(config):
    """ModelParameters of a scenario: parameter file plus its [parameters] overrides"""
    return load_parameters(parameter_file(config), flatten_overrides(config.parameters))


def parse_override(text):
    """
    Parse one "dotted.key=value" command-line override

    The value is read as a TOML value (numbers, booleans, arrays, quoted
    strings); anything else is kept as a plain string.
    """
    if "=" not in text:
        raise ConfigError(f"override '{text}': expected dotted.key=value")
    key, value = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override '{text}': empty key")
    try:
        return key, tomllib.loads(f"value = {value.strip()}")["value"]
    except tomllib.TOMLDecodeError:
        return key, value.strip()


def output_directory(config):
    """Config output_dir, else $DICE_OUTPUT_DIR, else ./reports"""
    return Path(config.output_dir or os.getenv('DICE_OUTPUT_DIR') or DEFAULT_OUTPUT_DIR)


def scenario_from_dict(raw):
    try:
        return ScenarioConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(format_validation_error(e))


def load_scenario_config(path=None, overrides=None):
    """
    Read and validate a scenario file

    Args:
        path: TOML scenario file (None = built-in defaults, no file)
        overrides: {dotted.key: value} applied before validation

    Returns:
        ScenarioConfig
    """
    raw = {}
    if path is not None:
        path = Path(path)
        try:
            with open(path, 'rb') as f:
                raw = tomllib.load(f)
        except OSError as e:
            raise ConfigError(f"scenario_file: I/O error reading {path}: {e}")
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"scenario_file: cannot parse {path}: {e}")
    return scenario_from_dict(apply_overrides(raw, overrides))


def _writable(directory):
    directory = Path(directory).resolve()
    while not directory.exists():
        if directory.parent == directory:
            return False
        directory = directory.parent
    return directory.is_dir() and os.access(directory, os.W_OK)


def validate_config(config):
    """
    Check a scenario config and its parameter file

    Returns:
        list of 'field: rule' violations (empty when valid)
    """
    violations = []
    try:
        params = scenario_parameters(config)
    except ConfigError as e:
        return list(e.violations)

    horizon = params.n_periods * params.step_size
    analytics = config.analytics
    for value in analytics.horizons:
        if value <= 0 or value > horizon:
            violations.append(f"analytics.horizons: {value:g} must lie in (0, {horizon:g}] years")
    if analytics.rate_periods > params.n_periods:
        violations.append(f"analytics.rate_periods: {analytics.rate_periods} exceeds "
                          f"{params.n_periods} model periods")

    if config.policy.source == 'load':
        policy_path = resolve_path(config.policy.path)
        if not policy_path.is_file() or not os.access(policy_path, os.R_OK):
            violations.append(f"policy.path: I/O error, cannot read {policy_path}")
        else:
            try:
                load_policy_csv(policy_path, params)
            except DiceError as e:
                violations.append(str(e) if not isinstance(e, ConfigError)
                                  else "; ".join(e.violations))

    out = output_directory(config)
    if not _writable(out):
        violations.append(f"output_dir: {out} is not writable")
    return violations


def validate_config_file(path=None, overrides=None):
    """validate_config for a scenario file; parse errors become violations"""
    try:
        config = load_scenario_config(path, overrides)
    except ConfigError as e:
        return list(e.violations)
    return validate_config(config)


def _obtain_policy(config, params, progress):
    if config.policy.source == 'load':
        progress(f"Loading policy from {config.policy.path}")
        return load_policy_csv(resolve_path(config.policy.path), params), None, False

    progress("Calibrating policy")
    try:
        calibration, cache_hit = fetch_calibrated_policy(params, config.optimizer,
                                                         force_refresh=not config.use_cache)
    except DegenerateTrajectoryError as e:
        raise CalibrationError(str(e)) from e
    return calibration.policy, calibration, cache_hit


def _quiet(message):
    logger.info("%s", message)


def run_calibration(config, progress=None):
    """Calibrate (or fetch from the cache) and write policy.csv"""
    progress = progress or _quiet
    try:
        config = config.model_copy(update={"policy": PolicySource()})
        violations = validate_config(config)
        if violations:
            raise ConfigError(violations)
        params = scenario_parameters(config)
        _, calibration, cache_hit = _obtain_policy(config, params, progress)
        out = output_directory(config)
        path = save_policy_csv(calibration.policy, params, out / 'policy.csv')
    except DiceError as e:
        logger.error("%s", e)
        return ScenarioResult(exit_code=e.exit_code, message=str(e))
    return ScenarioResult(exit_code=0, output_dir=out, files=[path],
                          calibration=calibration, cache_hit=cache_hit)


def run_scenario(config, progress=None):
    """
    Run one scenario end to end

    Args:
        config: ScenarioConfig
        progress: optional callable receiving one status line per stage

    Returns:
        ScenarioResult with exit_code 0 on success, otherwise the exit code
        of the failing error class and its message
    """
    progress = progress or _quiet
    result = ScenarioResult(exit_code=0)
    try:
        violations = validate_config(config)
        if violations:
            raise ConfigError(violations)
        params = scenario_parameters(config)

        policy, result.calibration, result.cache_hit = _obtain_policy(config, params, progress)
        trajectory = simulate(params, policy)

        analytics = config.analytics
        if analytics.prices:
            progress("Computing carbon prices")
            result.prices = compute_price_report(
                params, policy,
                horizons=analytics.horizons,
                bump_emission=analytics.scc_emission_bump,
                bump_consumption=analytics.scc_consumption_bump,
                check_convergence=analytics.scc_convergence_check,
                batch_rows=analytics.batch_rows,
                trajectory=trajectory,
            )
        if analytics.rates:
            progress("Computing interest rate of carbon")
            result.rates = r_scc_curve(
                params, policy,
                periods=range(min(analytics.rate_periods, params.n_periods)),
                bump=analytics.rate_bump,
                batch_rows=analytics.batch_rows,
                trajectory=trajectory,
            )

        progress("Writing reports")
        result.output_dir = output_directory(config)
        result.files = write_report_bundle(
            result.output_dir, params, policy, trajectory,
            prices=result.prices, rates=result.rates,
            calibration=result.calibration, cache_hit=result.cache_hit,
        )
    except DiceError as e:
        logger.error("%s", e)
        result.exit_code = e.exit_code
        result.message = str(e)
    return result
