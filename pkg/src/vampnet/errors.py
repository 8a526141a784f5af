"""Error taxonomy shared by every module.

Each class maps onto one failure family so the CLI can translate
exceptions into stable exit codes without string matching.
"""

from __future__ import annotations


class VampNetError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(VampNetError):
    """Operands have incompatible shapes; message names both shapes."""


class NumericError(VampNetError):
    """A numeric-domain failure: NaN/Inf inputs, diverged loss, bad domain."""


class ConfigError(VampNetError):
    """A configuration value is out of its documented range or missing."""


class ContractError(VampNetError):
    """A caller violated an API precondition (misuse, not bad data)."""


class VcfParseError(VampNetError):
    """Malformed VCF or cohort input; carries the offending line number."""

    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class FileFormatError(VampNetError):
    """Malformed artifact file (checkpoint or run config); names the line."""

    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class UsageError(VampNetError):
    """Bad command-line invocation (unknown flag, missing argument)."""
