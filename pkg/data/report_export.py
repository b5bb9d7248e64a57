"""
Report Export

Writes the CSV report bundle and summary.txt for one scenario run.
Numbers are written with 10 significant digits and rows in period order,
so identical runs produce identical files.
"""
import logging
from pathlib import Path

import numpy as np
import pandas as pd
from tabulate import tabulate

from data.policy_cache import save_policy_csv
from services.carbon_pricing import cost_emission_frame
from services.errors import ReportIOError
from services.parameters import get_parameter_set

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.10g'


def write_csv(frame, path):
    """Write a DataFrame in the bundle's fixed numeric format"""
    path = Path(path)
    try:
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
    except OSError as e:
        raise ReportIOError(f"cannot write {path}: {e}")
    logger.debug("Wrote %s (%d rows)", path, len(frame))
    return path


def prices_summary_frame(prices):
    return pd.DataFrame([{
        'k_par': prices.k_par,
        'k_par_star': prices.k_par_star,
        'k_scc': prices.k_scc,
        'scc_initial': prices.scc_initial,
        'gap_at_zero': prices.gap_at_zero,
        'scc_revenue': prices.scc_revenue,
        'coverage_ratio': prices.coverage_ratio,
        'covers_cost': int(prices.covers_cost),
        'scc_convergence_gap': prices.scc_convergence_gap,
    }])


def scc_curve_frame(prices, trajectory):
    return pd.DataFrame({
        'period': np.arange(len(prices.scc_curve)),
        'year': trajectory.years,
        'scc': prices.scc_curve,
        'discounted_scc': prices.scc_curve / trajectory.numeraire,
        'numeraire': trajectory.numeraire,
    })


def deviation_curve_frame(prices, trajectory):
    # Both signs: SCC/N - K_SCC and K_SCC - SCC/N
    return pd.DataFrame({
        'period': np.arange(len(prices.deviation_curve)),
        'year': trajectory.years,
        'discounted_scc_minus_k_scc': prices.deviation_curve,
        'k_scc_minus_discounted_scc': -prices.deviation_curve,
        'emissions': trajectory.emissions,
    })


def horizon_sweep_frame(prices):
    return pd.DataFrame(
        [{'horizon': p.horizon, 'k_par': p.k_par, 'k_par_star': p.k_par_star}
         for p in prices.horizon_curve],
        columns=['horizon', 'k_par', 'k_par_star'],
    )


def sensitivities_frame(rates, trajectory):
    """Full sensitivity row at the first reported period"""
    j = int(rates.periods[0])
    damage = rates.damage_sensitivities[0, j:]
    abatement = np.zeros_like(damage)
    abatement[0] = rates.abatement_sensitivity[0]
    return pd.DataFrame({
        'period': np.arange(j, j + len(damage)),
        'year': trajectory.years[j:],
        'offset_years': np.arange(len(damage)) * trajectory.step_size,
        'abatement_sensitivity': abatement,
        'damage_sensitivity': damage,
    })


def format_summary(params, prices=None, rates=None, calibration=None, cache_hit=False):
    """Human-readable summary.txt contents"""
    start = params.time.start_year
    entry = get_parameter_set(params.name)
    label = f"{entry['display_name']} ({params.name})" if entry else params.name
    lines = ["DICE carbon pricing summary", "=" * 60,
             f"Parameter set: {label}",
             *([f"  {entry['description']}"] if entry else []),
             f"Horizon: {params.time.time_horizon_years} years, step {params.step_size:g}, "
             f"numeraire rate {params.numeraire_rate:.4%} (linear compounding)",
             ""]

    if calibration is not None:
        status = "converged" if calibration.converged else "NOT converged (iteration cap / stall)"
        lines += [
            "Calibration",
            f"  status: {status}{' (cached)' if cache_hit else ''}",
            f"  iterations: {calibration.iterations}",
            f"  projected gradient max-norm: {calibration.gradient_norm:.3e}",
            "",
        ]

    if prices is not None:
        table = [
            [f"SCC({start})", f"{prices.scc_initial:.2f}", "$/tCO2"],
            ["K_SCC", f"{prices.k_scc:.2f}", "$/tCO2"],
            ["K_par", f"{prices.k_par:.2f}", "$/tCO2"],
            ["K_par*", f"{prices.k_par_star:.2f}", "$/tCO2"],
            ["Accumulated discounted cost", f"{prices.gap_at_zero:.2f}", "$T"],
            ["Revenue of charging SCC", f"{prices.scc_revenue:.2f}", "$T"],
        ]
        lines += [tabulate(table, headers=["Quantity", "Value", "Unit"], tablefmt="grid"), ""]
        verdict = "yes" if prices.covers_cost else "no"
        lines += [f"SCC pricing covers cost (K_SCC >= K_par): {verdict}, "
                  f"coverage ratio {prices.coverage_ratio:.3f}"]
        if prices.horizon_curve:
            lines += ["", tabulate([[f"{p.horizon:g}", f"{p.k_par:.2f}", f"{p.k_par_star:.2f}"]
                                    for p in prices.horizon_curve],
                                   headers=["Horizon (years)", "K_par", "K_par*"], tablefmt="grid")]
        lines.append("")

    if rates is not None:
        lines += [
            "Interest rate of carbon",
            f"  mean r_SCC over the first 10 periods: {rates.early_average(10):.4%}",
            f"  discount rate: {rates.discount_rate:.4%}",
            f"  periods without IRR root: {rates.no_root_count} of {len(rates.periods)}",
        ]
        if rates.identity:
            lines.append(f"  discounting identity gap at t_j={rates.identity['t_j']}: "
                         f"{rates.identity['relative_gap']:.2%}")
        lines.append("")
    return "\n".join(lines)


def write_summary(path, text):
    path = Path(path)
    try:
        path.write_text(text + "\n", encoding='utf-8')
    except OSError as e:
        raise ReportIOError(f"cannot write {path}: {e}")
    return path


def write_report_bundle(output_dir, params, policy, trajectory, prices=None, rates=None,
                        calibration=None, cache_hit=False):
    """
    Write every report file for one run

    Args:
        output_dir: directory (created if needed)
        params: ModelParameters
        policy: AbatementPolicy used for the analytics
        trajectory: simulate(params, policy)
        prices: PriceReport or None (skipped)
        rates: RateReport or None (skipped)
        calibration: CalibrationResult or None

    Returns:
        list of written paths
    """
    output_dir = Path(output_dir)
    try:
        output_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ReportIOError(f"cannot create output directory {output_dir}: {e}")

    written = [save_policy_csv(policy, params, output_dir / 'policy.csv'),
               write_csv(trajectory.to_frame(), output_dir / 'trajectory.csv')]

    if prices is not None:
        written += [
            write_csv(prices_summary_frame(prices), output_dir / 'prices_summary.csv'),
            write_csv(scc_curve_frame(prices, trajectory), output_dir / 'scc_curve.csv'),
            write_csv(deviation_curve_frame(prices, trajectory), output_dir / 'deviation_curve.csv'),
            write_csv(horizon_sweep_frame(prices), output_dir / 'horizon_sweep.csv'),
            write_csv(cost_emission_frame(trajectory), output_dir / 'cost_emission.csv'),
        ]

    if rates is not None:
        written += [
            write_csv(rates.to_frame(), output_dir / 'r_scc_curve.csv'),
            write_csv(sensitivities_frame(rates, trajectory), output_dir / 'sensitivities_t0.csv'),
        ]

    written.append(write_summary(output_dir / 'summary.txt',
                                 format_summary(params, prices, rates, calibration, cache_hit)))
    logger.info("Wrote %d report files to %s", len(written), output_dir)
    return written
