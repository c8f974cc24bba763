"""Exception hierarchy shared across the pipeline.

Exit-code mapping used by the CLI:
  2 -> ValidationError / ConfigError
  3 -> NoConsensusError / ReconstructionOrderError
  4 -> NumericError
"""


class Mr2usError(Exception):
    """Base class for all pipeline errors."""

    exit_code = 1


class ValidationError(Mr2usError):
    """Bad input data or parameters (dimensions, ranges, missing files)."""

    exit_code = 2


class ConfigError(ValidationError):
    """Invalid or inconsistent configuration (unknown plugin id, checkpoint mismatch)."""

    exit_code = 2


class NoConsensusError(Mr2usError):
    """Displacement clustering found no dense cluster; frame pair unusable."""

    exit_code = 3


class ReconstructionOrderError(Mr2usError):
    """Recovered frame positions move backwards beyond tolerance."""

    exit_code = 3


class NumericError(Mr2usError):
    """Non-finite loss or other numeric failure during optimization."""

    exit_code = 4
