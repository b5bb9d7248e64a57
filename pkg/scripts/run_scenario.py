"""
Run a DICE Carbon Pricing Scenario

Calibrates (or loads) the abatement policy, computes the implied CO2 prices
(K_par, K_par*, SCC, K_SCC) and the interest rate of carbon, and writes the
CSV report bundle plus summary.txt.

Exit codes: 0 ok, 2 config, 3 calibration, 4 analytics, 5 I/O

Usage:
    python scripts/run_scenario.py run                          # Default scenario
    python scripts/run_scenario.py run --horizons 150           # Single-horizon sweep
    python scripts/run_scenario.py run --skip-rates             # Prices only
    python scripts/run_scenario.py run --policy-file reports/policy.csv
    python scripts/run_scenario.py run --set parameters.time.numeraire_rate=0.02
    python scripts/run_scenario.py run --analytics.rate_periods 50
    python scripts/run_scenario.py calibrate                    # Writes policy.csv
    python scripts/run_scenario.py validate                     # Lists config violations
"""
import sys
import argparse
import logging
from pathlib import Path

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from datetime import datetime
from tabulate import tabulate

from services.errors import ConfigError
from services.scenario import (
    DEFAULT_SCENARIO_FILE,
    load_scenario_config,
    parse_override,
    run_calibration,
    run_scenario,
    validate_config_file,
)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', '-c', type=str, default=str(DEFAULT_SCENARIO_FILE),
                        help='Scenario file (TOML)')
    common.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                        help='Override a config key, e.g. --set analytics.rate_periods=50 (repeatable)')
    common.add_argument('--verbose', '-v', action='store_true', help='Debug logging')

    parser = argparse.ArgumentParser(description='DICE-2016 implied CO2 price and interest rate of carbon')
    sub = parser.add_subparsers(dest='command', required=True)

    run = sub.add_parser('run', parents=[common], help='Run the full scenario and write all reports')
    run.add_argument('--horizons', type=str, default=None,
                     help='Comma-separated horizons in years for the K_par sweep, e.g. 150,500')
    run.add_argument('--skip-rates', action='store_true', help='Skip the r_SCC curve')
    run.add_argument('--skip-prices', action='store_true', help='Skip the carbon prices')
    run.add_argument('--output-dir', type=str, default=None, help='Report directory')
    run.add_argument('--policy-file', type=str, default=None,
                     help='Load the policy from this policy.csv instead of calibrating')
    run.add_argument('--no-cache', action='store_true', help='Recalibrate even if cached')

    calibrate = sub.add_parser('calibrate', parents=[common], help='Calibrate the policy and write policy.csv')
    calibrate.add_argument('--output-dir', type=str, default=None, help='Directory for policy.csv')
    calibrate.add_argument('--no-cache', action='store_true', help='Recalibrate even if cached')

    sub.add_parser('validate', parents=[common], help='Check the scenario and parameter files')
    return parser


def collect_overrides(args, extras):
    """
    Config overrides from --set, the first-class flags and any --dotted.key value pairs
    """
    overrides = dict(parse_override(text) for text in args.overrides)

    i = 0
    while i < len(extras):
        token = extras[i]
        if not token.startswith('--') or '.' not in token:
            raise ConfigError(f"unrecognized argument '{token}'")
        if '=' in token:
            key, value = parse_override(token[2:])
            i += 1
        else:
            if i + 1 >= len(extras):
                raise ConfigError(f"argument '{token}' needs a value")
            key, value = parse_override(f"{token[2:]}={extras[i + 1]}")
            i += 2
        overrides[key] = value

    if getattr(args, 'horizons', None):
        overrides['analytics.horizons'] = [float(h) for h in args.horizons.split(',') if h.strip()]
    if getattr(args, 'skip_rates', False):
        overrides['analytics.rates'] = False
    if getattr(args, 'skip_prices', False):
        overrides['analytics.prices'] = False
    if getattr(args, 'output_dir', None):
        overrides['output_dir'] = args.output_dir
    if getattr(args, 'policy_file', None):
        overrides['policy.source'] = 'load'
        overrides['policy.path'] = args.policy_file
    if getattr(args, 'no_cache', False):
        overrides['use_cache'] = False
    return overrides


class ProgressPrinter:
    """Prints [i/N] step headers"""

    def __init__(self, total):
        self.total = total
        self.current = 0

    def __call__(self, message):
        self.current += 1
        print(f"\n[{self.current}/{self.total}] {message}...")
        print("-" * 40)


def print_violations(violations):
    for violation in violations:
        print(f"[ERROR] {violation}")


def print_headline(result):
    if result.calibration is not None:
        cal = result.calibration
        if result.cache_hit:
            print(f"[CACHE HIT] Calibrated policy ({cal.iterations} iterations)")
        tag = "[OK]" if cal.converged else "[WARNING]"
        print(f"{tag} Calibration {'converged' if cal.converged else 'did not converge'}: "
              f"{cal.iterations} iterations, projected gradient {cal.gradient_norm:.3e}")

    if result.prices is not None:
        p = result.prices
        table = [
            ["SCC (first year)", f"{p.scc_initial:.2f}"],
            ["K_SCC", f"{p.k_scc:.2f}"],
            ["K_par", f"{p.k_par:.2f}"],
            ["K_par*", f"{p.k_par_star:.2f}"],
        ]
        print()
        print(tabulate(table, headers=["Price", "$/tCO2"], tablefmt="grid"))
        if p.scc_convergence_gap == p.scc_convergence_gap and p.scc_convergence_gap >= 0.02:
            print(f"[WARNING] SCC moved {p.scc_convergence_gap:.1%} when halving the bumps")

    if result.rates is not None:
        r = result.rates
        print(f"\nMean r_SCC over the first 10 periods: {r.early_average(10):.2%} "
              f"(discount rate {r.discount_rate:.2%})")
        if r.no_root_count:
            print(f"[WARNING] {r.no_root_count} periods without an IRR root")


def main(argv=None):
    parser = build_parser()
    args, extras = parser.parse_known_args(argv)

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format='%(levelname)s %(name)s: %(message)s')

    print("=" * 60)
    print(f"DICE CARBON PRICING - {args.command.upper()} - {datetime.now().strftime('%Y-%m-%d %I:%M %p')}")
    print("=" * 60)

    try:
        overrides = collect_overrides(args, extras)
    except ConfigError as e:
        print_violations(e.violations)
        return e.exit_code

    if args.command == 'validate':
        violations = validate_config_file(args.config, overrides)
        if violations:
            print_violations(violations)
            print(f"\n{len(violations)} violation(s)")
            return ConfigError.exit_code
        print("[OK] Configuration is valid")
        return 0

    try:
        config = load_scenario_config(args.config, overrides)
    except ConfigError as e:
        print_violations(e.violations)
        return e.exit_code

    if args.command == 'calibrate':
        result = run_calibration(config, progress=ProgressPrinter(1))
        if result.exit_code:
            print(f"[ERROR] {result.message}")
            return result.exit_code
        print_headline(result)
        print(f"[OK] Policy written to {result.files[0]}")
        return 0

    steps = 2 + int(config.analytics.prices) + int(config.analytics.rates)
    result = run_scenario(config, progress=ProgressPrinter(steps))
    if result.exit_code:
        print(f"\n[ERROR] {result.message}")
        return result.exit_code

    print_headline(result)
    print(f"\n[OK] Wrote {len(result.files)} files to {result.output_dir}")
    print("\n" + "=" * 60)
    print("ALL DONE!")
    print("=" * 60)
    return 0


if __name__ == "__main__":
    sys.exit(main())
