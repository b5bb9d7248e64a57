"""
Run All - Manual Execution

Runs the default scenario in the right order:
1. Validate the scenario and parameter files
2. Calibrate the abatement policy (served from the cache when unchanged)
3. Compute prices and rates, write the report bundle

Usage:
    python scripts/run_all.py                 # Everything
    python scripts/run_all.py --skip-rates    # Prices only (faster)
    python scripts/run_all.py --no-cache      # Force recalibration
"""
import sys
import argparse
import logging
from pathlib import Path

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from datetime import datetime


def main(argv=None):
    parser = argparse.ArgumentParser(description='Validate, calibrate and run the default scenario')
    parser.add_argument('--config', '-c', type=str, default=None, help='Scenario file (TOML)')
    parser.add_argument('--skip-rates', action='store_true', help='Skip the r_SCC curve')
    parser.add_argument('--no-cache', action='store_true', help='Recalibrate even if cached')
    parser.add_argument('--output-dir', type=str, default=None, help='Report directory')

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format='%(levelname)s %(name)s: %(message)s')

    from services.scenario import (
        DEFAULT_SCENARIO_FILE, load_scenario_config, run_calibration, run_scenario, validate_config,
    )
    from scripts.run_scenario import print_headline
    from services.errors import ConfigError

    print("=" * 60)
    print(f"RUN ALL - {datetime.now().strftime('%Y-%m-%d %I:%M %p')}")
    print("=" * 60)

    overrides = {}
    if args.skip_rates:
        overrides['analytics.rates'] = False
    if args.no_cache:
        overrides['use_cache'] = False
    if args.output_dir:
        overrides['output_dir'] = args.output_dir

    # Step 1: Validate
    print("\n[1/3] Validating configuration...")
    print("-" * 40)
    try:
        config = load_scenario_config(args.config or DEFAULT_SCENARIO_FILE, overrides)
    except ConfigError as e:
        config, violations = None, e.violations
    else:
        violations = validate_config(config)
    if violations:
        for violation in violations:
            print(f"[ERROR] {violation}")
        return 2
    print("[OK] Configuration is valid")

    # Step 2: Calibrate (cached)
    print("\n[2/3] Calibrating policy...")
    print("-" * 40)
    calibration = run_calibration(config)
    if calibration.exit_code:
        print(f"[ERROR] {calibration.message}")
        return calibration.exit_code
    print_headline(calibration)

    # Step 3: Analytics on the calibrated policy
    print("\n[3/3] Computing prices and rates...")
    print("-" * 40)
    # The fresh calibration is in the cache now
    result = run_scenario(config.model_copy(update={'use_cache': True}))
    if result.exit_code:
        print(f"[ERROR] {result.message}")
        return result.exit_code
    print_headline(result)
    print(f"\n[OK] Wrote {len(result.files)} files to {result.output_dir}")

    print("\n" + "=" * 60)
    print("ALL DONE!")
    print("=" * 60)
    return 0


if __name__ == "__main__":
    sys.exit(main())
