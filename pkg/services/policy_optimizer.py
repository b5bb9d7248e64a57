"""
Abatement Policy Optimizer

Calibrates the abatement path mu(t) to the welfare-maximising equilibrium
by projected gradient ascent on the annual grid.

- Gradient: central finite differences of V(0) per coordinate, one-sided at
  active bounds, all 2T bumped simulations evaluated as one batch
- Step: projected ascent step scaled per coordinate by the curvature of the
  abatement-cost term, with Armijo backtracking
- Certificate: projected-gradient max-norm and KKT sign conditions
"""
import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from services.dice_model import AbatementPolicy, batch_welfare, simulate
from services.errors import AnalyticsError, CalibrationError, DegenerateTrajectoryError
from services.parameters import annual_paths

logger = logging.getLogger(__name__)

# mu values closer than this to a bound count as on the bound
BOUND_TOLERANCE = 1e-12


class OptimizerSettings(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)

    max_iterations: int = Field(400, gt=0)
    gradient_step: float = Field(1.0, gt=0)
    tolerance: float = Field(1e-3, gt=0, lt=1)
    bump_size: float = Field(1e-4, gt=0, le=1e-3)
    max_backtracks: int = Field(30, gt=0)
    armijo: float = Field(1e-4, gt=0, lt=1)
    batch_rows: int = Field(512, gt=1)

    def fingerprint(self):
        return hashlib.sha256(self.model_dump_json().encode('utf-8')).hexdigest()


@dataclass
class CalibrationResult:
    """Outcome of a calibration run"""
    policy: AbatementPolicy
    welfare_history: list
    iterations: int
    converged: bool
    gradient_norm: float
    gradient: np.ndarray
    kkt: list = field(default_factory=list)

    @property
    def welfare(self):
        return self.welfare_history[-1]

    @property
    def initial_welfare(self):
        return self.welfare_history[0]


def initial_policy(params, start=0.03, end=1.0, years=150.0):
    """Default starting point: linear ramp from 0.03 to 1.0 over 150 years"""
    return AbatementPolicy.ramp(params, start=start, end=end, years=years)


def evaluate_welfare_rows(params, mu_matrix, batch_rows=512, **bumps):
    """
    Welfare of every row of a (possibly large) batch, evaluated in chunks

    Raises DegenerateTrajectoryError whose `rows` are indices into mu_matrix.
    """
    mu_matrix = np.atleast_2d(mu_matrix)
    values = np.empty(mu_matrix.shape[0])
    for start in range(0, mu_matrix.shape[0], batch_rows):
        stop = min(start + batch_rows, mu_matrix.shape[0])
        chunk_bumps = {name: None if value is None else np.atleast_2d(value)[start:stop]
                       for name, value in bumps.items()}
        try:
            values[start:stop] = batch_welfare(params, mu_matrix[start:stop], **chunk_bumps)
        except DegenerateTrajectoryError as e:
            e.rows = getattr(e, 'rows', np.array([], dtype=int)) + start
            raise
    return values


def bumped_mu(params, mu, periods, bump_size):
    """
    Up/down bumped copies of mu for each period, clipped to the bounds

    Returns:
        (rows, up, down): rows is (2 * len(periods), T) with up/down rows
        interleaved; up/down are the bumped coordinate values
    """
    periods = np.asarray(periods, dtype=int)
    up = np.minimum(mu[periods] + bump_size, params.max_abatement)
    down = np.maximum(mu[periods] - bump_size, 0.0)
    rows = np.repeat(mu[np.newaxis, :], 2 * len(periods), axis=0)
    index = np.arange(len(periods))
    rows[2 * index, periods] = up
    rows[2 * index + 1, periods] = down
    return rows, up, down


def welfare_gradient(params, policy, bump_size, batch_rows=512):
    """
    dV(0)/dmu(t_j) for every period by finite differences

    Central differences where both bumped points are feasible; at an active
    bound the bumped point is clipped, which turns the quotient one-sided.

    Args:
        params: ModelParameters
        policy: AbatementPolicy within bounds
        bump_size: mu bump (dimensionless)

    Returns:
        np.ndarray of length T
    """
    mu = np.asarray(policy.mu, dtype=float)
    periods = np.arange(len(mu))
    rows, up, down = bumped_mu(params, mu, periods, bump_size)
    try:
        values = evaluate_welfare_rows(params, rows, batch_rows=batch_rows)
    except DegenerateTrajectoryError as e:
        bad = getattr(e, 'rows', np.array([], dtype=int))
        period = int(bad[0] // 2) if len(bad) else e.period
        raise AnalyticsError(
            f"non-finite welfare when bumping mu at period {period}: {e.reason}") from e
    return (values[0::2] - values[1::2]) / (up - down)


def projected_gradient(mu, gradient, max_abatement, tolerance=0.0):
    """Gradient with outward-pointing components at active bounds removed"""
    projected = np.array(gradient, dtype=float)
    at_lower = mu <= BOUND_TOLERANCE
    at_upper = mu >= max_abatement - BOUND_TOLERANCE
    projected[at_lower & (projected < 0)] = 0.0
    projected[at_upper & (projected > 0)] = 0.0
    # Flat coordinates stay where they are
    projected[np.abs(projected) <= tolerance] = 0.0
    return projected


def kkt_violations(policy, gradient, settings, max_abatement=1.0):
    """
    Periods failing the first-order conditions

    Interior coordinates need |g| <= tolerance, coordinates at mu = 0 need
    g <= tolerance and coordinates at the upper bound need g >= -tolerance.

    Returns:
        list of dicts with period, mu, gradient and the violated rule
    """
    tol = settings.tolerance
    violations = []
    for j, (mu_j, g_j) in enumerate(zip(policy.mu, gradient)):
        if mu_j <= BOUND_TOLERANCE:
            ok, rule = g_j <= tol, 'lower bound: gradient must not point inward'
        elif mu_j >= max_abatement - BOUND_TOLERANCE:
            ok, rule = g_j >= -tol, 'upper bound: gradient must not point inward'
        else:
            ok, rule = abs(g_j) <= tol, 'interior: gradient must vanish'
        if not ok:
            violations.append({'period': j, 'mu': float(mu_j), 'gradient': float(g_j), 'rule': rule})
    return violations


def curvature_scale(params, trajectory):
    """
    Per-coordinate curvature of the abatement-cost term in welfare units

    w_j * Y_j * theta1_j * theta2 * (theta2 - 1) * mu_j^(theta2 - 2), with
    w_j the marginal welfare of time-t_j consumption. mu is floored at 0.01
    and the result at w_j * Y_j * 1e-4 so the scale stays finite near zero.
    """
    theta2 = params.abatement.expcost2
    util = params.utility
    dt = params.step_size
    n = params.n_periods

    theta1 = annual_paths(params).abatement_coefficient[:n]

    weight = util.scale * 1000.0 * trajectory.consumption_per_capita ** (-util.elasmu) \
        / trajectory.numeraire * dt
    mu = np.maximum(trajectory.mu, 0.01)
    curvature = weight * trajectory.gross_output * theta1 * theta2 * (theta2 - 1.0) * mu ** (theta2 - 2.0)
    return np.maximum(curvature, weight * trajectory.gross_output * 1e-4)


def _gradient_or_fail(params, mu, settings, iteration):
    try:
        return welfare_gradient(params, AbatementPolicy(mu), settings.bump_size,
                                batch_rows=settings.batch_rows)
    except AnalyticsError as e:
        raise CalibrationError(f"gradient evaluation failed at iteration {iteration}: {e}") from e


def _safe_welfare(params, mu):
    try:
        return float(batch_welfare(params, mu[np.newaxis, :])[0])
    except DegenerateTrajectoryError:
        return None


def calibrate_with_report(params, policy=None, settings=None):
    """
    Calibrate the abatement policy and report the optimisation path

    Args:
        params: ModelParameters
        policy: starting AbatementPolicy (defaults to the 150-year ramp)
        settings: OptimizerSettings

    Returns:
        CalibrationResult
    """
    settings = settings or OptimizerSettings()
    policy = policy if policy is not None else initial_policy(params)
    policy.check(params)

    upper = params.max_abatement
    mu = policy.mu.copy()
    current = _safe_welfare(params, mu)
    if current is None:
        raise CalibrationError("initial policy produces a degenerate trajectory")
    history = [current]

    gradient = np.zeros_like(mu)
    norm = np.inf
    converged = False
    iterations = 0
    stale = True

    for iterations in range(1, settings.max_iterations + 1):
        gradient = _gradient_or_fail(params, mu, settings, iterations)
        stale = False
        trajectory = simulate(params, AbatementPolicy(mu))

        projected = projected_gradient(mu, gradient, upper, settings.tolerance)
        norm = float(np.max(np.abs(projected_gradient(mu, gradient, upper))))
        if norm <= settings.tolerance:
            converged = True
            iterations -= 1
            break

        direction = projected / curvature_scale(params, trajectory)
        step_length = settings.gradient_step
        accepted = False
        failures = 0
        for _ in range(settings.max_backtracks):
            trial = np.clip(mu + step_length * direction, 0.0, upper)
            value = _safe_welfare(params, trial)
            if value is None:
                failures += 1
            elif value >= current + settings.armijo * float(gradient @ (trial - mu)):
                accepted = True
                break
            step_length *= 0.5

        if not accepted:
            if failures == settings.max_backtracks:
                raise CalibrationError(
                    f"every trial point failed to simulate at iteration {iterations}")
            logger.warning("Line search stalled at iteration %d (projected gradient %.3e)",
                           iterations, norm)
            break

        mu = trial
        current = value
        history.append(current)
        stale = True
        if iterations % 25 == 0:
            logger.info("iteration %d: welfare %.6f, projected gradient %.3e",
                        iterations, current, norm)

    if stale and iterations:
        # Iteration cap reached right after a step: certify the final point
        gradient = _gradient_or_fail(params, mu, settings, iterations)
        norm = float(np.max(np.abs(projected_gradient(mu, gradient, upper))))
        converged = norm <= settings.tolerance

    if not converged:
        logger.warning("Calibration stopped after %d iterations with projected gradient %.3e "
                       "(tolerance %.1e)", iterations, norm, settings.tolerance)

    result_policy = AbatementPolicy(mu)
    return CalibrationResult(
        policy=result_policy,
        welfare_history=history,
        iterations=iterations,
        converged=converged,
        gradient_norm=norm,
        gradient=gradient,
        kkt=kkt_violations(result_policy, gradient, settings, upper),
    )


def calibrate(params, initial_policy=None, settings=None):
    """Calibrated AbatementPolicy (see calibrate_with_report)"""
    return calibrate_with_report(params, initial_policy, settings).policy
