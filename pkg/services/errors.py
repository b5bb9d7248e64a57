"""
Exception hierarchy for the DICE carbon-pricing engine

Every error carries the process exit code the scenario runner reports for it:
    2 - configuration
    3 - calibration
    4 - analytics
    5 - I/O
"""


class DiceError(Exception):
    """Base class for all engine errors"""

    exit_code = 1


class ConfigError(DiceError):
    """Parameter file or scenario config is invalid"""

    exit_code = 2

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations) or "invalid configuration")


class CalibrationError(DiceError):
    """Policy calibration could not make progress"""

    exit_code = 3


class AnalyticsError(DiceError):
    """Failure while computing prices, rates or sensitivities"""

    exit_code = 4


class DegenerateTrajectoryError(AnalyticsError):
    """Simulation produced a non-finite or non-positive quantity"""

    def __init__(self, period, reason):
        self.period = period
        self.reason = reason
        super().__init__(f"degenerate trajectory at period {period}: {reason}")


class UndefinedPriceError(AnalyticsError):
    """A price ratio has zero total emissions in its denominator"""


class GridMismatchError(AnalyticsError):
    """Two series that must share a time grid do not"""


class NoRootError(AnalyticsError):
    """Internal rate of return has no root in the search bracket"""

    def __init__(self, period, reason):
        self.period = period
        self.reason = reason
        super().__init__(f"no IRR root for period {period}: {reason}")


class ReportIOError(DiceError):
    """Reading or writing a report / policy file failed"""

    exit_code = 5
