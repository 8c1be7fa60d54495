"""Exception and warning types shared across the package."""


class EcmError(Exception):
    """Base class for errors raised by ecmsense."""


class InvalidInputError(EcmError, ValueError):
    """Non-finite, non-positive or otherwise malformed input."""


class SocRangeError(EcmError, ValueError):
    """State of charge left the range covered by a curve or schedule.

    ``index`` is the offending sample index when known.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ConditioningError(EcmError, ValueError):
    """Least-squares problem is rank deficient."""


class ScheduleStructureError(EcmError, ValueError):
    """Overlapping, non-contiguous or unordered SOC intervals."""


class SamplingError(EcmError, RuntimeError):
    """Rejection sampling could not produce a valid parameter set."""


class EmptyCellError(EcmError, RuntimeError):
    """Every Monte Carlo run for a report cell was invalid."""


class ParseError(EcmError, ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class SchemaError(ParseError):
    """Input file lacks required columns or keys."""


class ClampWarning(UserWarning):
    """SOC was clamped to [0, 1] during simulation."""


class PartialCoverageWarning(UserWarning):
    """Data ended before every requested SOC edge was crossed."""


class DegeneracyWarning(UserWarning):
    """Two RC time constants are practically indistinguishable."""


class GapWarning(UserWarning):
    """Drive-cycle data has a sampling gap."""
