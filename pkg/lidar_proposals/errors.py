from __future__ import annotations


class ProposalError(Exception):
    """Root of every error raised by lidar_proposals."""


class ConfigError(ProposalError, ValueError):
    """Invalid parameter value or unknown configuration key."""


class EmptyInputError(ProposalError, ValueError):
    """An operation needed at least one point, index or sample."""


class FormatError(ProposalError):
    """A binary file does not follow its declared layout."""


class LabelParseError(ProposalError):
    """Malformed KITTI label line."""

    def __init__(self, path: str, line_number: int, reason: str) -> None:
        super().__init__(f"{path}:{line_number}: {reason}")
        self.path = path
        self.line_number = line_number


class CalibrationError(ProposalError):
    """Calibration file missing a key or carrying a non-orthonormal rotation."""


class SceneSpecError(ProposalError, ValueError):
    """Synthetic scene description is inconsistent."""


class RingsRequiredError(ProposalError, ValueError):
    def __init__(self) -> None:
        super().__init__("rings required")


class FitError(ProposalError, ValueError):
    """Model fitting is impossible for the given data."""


class NumericalError(ProposalError, ArithmeticError):
    """Non-finite values appeared in a numeric pipeline."""
