"""
Calibrated Policy Cache

Calibrates the abatement policy or serves it from the database cache.
Cache entries are keyed by the parameter and optimizer-settings
fingerprints, so any parameter change forces a fresh calibration.

policy.csv (period, year, mu) is the portable exchange format; mu is
written with full double precision so a reloaded policy reproduces the
analytics exactly.
"""
import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

import logging

import numpy as np
import pandas as pd
from sqlalchemy.exc import SQLAlchemyError

from database.db import get_session, close_session, init_db
from database.models import CalibrationRun, PolicyValue
from services.dice_model import AbatementPolicy
from services.errors import ConfigError, DiceError, ReportIOError
from services.parameters import annual_paths
from services.policy_optimizer import CalibrationResult, OptimizerSettings, calibrate_with_report

logger = logging.getLogger(__name__)

POLICY_COLUMNS = ['period', 'year', 'mu']


def find_cached_run(session, params, settings):
    """Most recent run matching both fingerprints, or None"""
    return session.query(CalibrationRun).filter_by(
        parameter_fingerprint=params.fingerprint(),
        settings_fingerprint=settings.fingerprint(),
        n_periods=params.n_periods,
    ).order_by(CalibrationRun.created_at.desc(), CalibrationRun.id.desc()).first()


def store_calibration(session, params, settings, result):
    """Persist a calibration result, returning the CalibrationRun"""
    years = annual_paths(params).years
    run = CalibrationRun(
        parameter_set=params.name,
        parameter_fingerprint=params.fingerprint(),
        settings_fingerprint=settings.fingerprint(),
        iterations=result.iterations,
        converged=result.converged,
        gradient_norm=float(result.gradient_norm),
        welfare=float(result.welfare),
        n_periods=params.n_periods,
    )
    run.values = [PolicyValue(period=i, year=float(years[i]), mu=float(mu))
                  for i, mu in enumerate(result.policy.mu)]
    session.add(run)
    session.commit()
    return run


def _result_from_run(run):
    mu = np.array([value.mu for value in run.values], dtype=float)
    return CalibrationResult(
        policy=AbatementPolicy(mu),
        welfare_history=[run.welfare],
        iterations=run.iterations,
        converged=run.converged,
        gradient_norm=run.gradient_norm,
        gradient=np.array([]),
    )


def fetch_calibrated_policy(params, settings=None, force_refresh=False, initial_policy=None):
    """
    Calibrated policy from the cache, calibrating on a miss

    Args:
        params: ModelParameters
        settings: OptimizerSettings
        force_refresh: If True, calibrate even if cached
        initial_policy: optional starting point; the cache is neither read nor
            written when one is given

    Returns:
        (CalibrationResult, cache_hit)
    """
    settings = settings or OptimizerSettings()
    if initial_policy is not None:
        logger.info("Calibrating %s from a given starting point, bypassing the cache", params.name)
        return calibrate_with_report(params, initial_policy, settings), False

    try:
        init_db()
        session = get_session()
        if not force_refresh:
            run = find_cached_run(session, params, settings)
            if run is not None and len(run.values) == params.n_periods:
                logger.info("Using cached calibration #%d for %s (%d iterations, %s)",
                            run.id, params.name, run.iterations, run.created_at)
                result = _result_from_run(run)
                close_session()
                return result, True
    except SQLAlchemyError as e:
        logger.warning("Policy cache unavailable, calibrating without it: %s", e)
        close_session()
        return calibrate_with_report(params, initial_policy, settings), False

    try:
        result = calibrate_with_report(params, initial_policy, settings)
    except DiceError:
        close_session()
        raise
    try:
        run = store_calibration(session, params, settings, result)
        logger.info("Stored calibration #%d for %s", run.id, params.name)
    except SQLAlchemyError as e:
        session.rollback()
        logger.warning("Could not store calibration in the cache: %s", e)
    finally:
        close_session()
    return result, False


def policy_frame(policy, params):
    years = annual_paths(params).years[:params.n_periods]
    return pd.DataFrame({
        'period': np.arange(params.n_periods),
        'year': years,
        'mu': policy.mu,
    })


def save_policy_csv(policy, params, path):
    """Write policy.csv (period, year, mu)"""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        policy_frame(policy, params).to_csv(path, index=False, float_format='%.17g')
    except OSError as e:
        raise ReportIOError(f"cannot write policy file {path}: {e}")
    return path


def load_policy_csv(path, params):
    """
    Read a policy written by save_policy_csv

    Returns:
        AbatementPolicy checked against params
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, float_precision='round_trip')
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ReportIOError(f"cannot read policy file {path}: {e}")
    missing = [column for column in POLICY_COLUMNS if column not in frame.columns]
    if missing:
        raise ConfigError(f"policy.path: {path} lacks columns {', '.join(missing)}")
    frame = frame.sort_values('period')
    if list(frame['period']) != list(range(len(frame))):
        raise ConfigError(f"policy.path: periods in {path} must run 0..n-1 without gaps")
    return AbatementPolicy(frame['mu'].to_numpy(dtype=float)).check(params)
