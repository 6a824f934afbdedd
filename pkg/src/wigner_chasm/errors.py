"""Exceptions raised by wigner_chasm."""

from typing import Optional


class WignerError(Exception):
    """Base exception for all wigner_chasm errors."""

    pass


class GridError(WignerError, ValueError):
    """Raised for invalid grid geometry or mismatched field shapes."""

    pass


class SplineError(WignerError, ValueError):
    """Raised for invalid spline input or a singular spline system."""

    pass


class PmbcError(WignerError, ValueError):
    """Raised when a patch layout cannot carry the requested PMBC stencil."""

    pass


class CflError(WignerError, ValueError):
    """Raised when an advection step would move a point by more than one cell."""

    pass


class NumericalError(WignerError):
    """Raised when a numerical self-check fails (residues, non-finite values)."""

    pass


class ConfigError(WignerError, ValueError):
    """Raised for experiment configuration parse or validation failures.

    Attributes:
        line (Optional[int]): 1-based line number in the configuration text,
            None when the error is not tied to a line.
        key (Optional[str]): Configuration key involved, if any.
    """

    def __init__(
        self, message: str, line: Optional[int] = None, key: Optional[str] = None
    ) -> None:
        self.line = line
        self.key = key
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TransportError(WignerError):
    """Base exception for patch exchange failures."""

    pass


class TransportConnectionError(TransportError):
    """Raised when an expected message does not arrive or a socket fails."""

    pass


class TransportProtocolError(TransportError):
    """Raised for messages that violate the exchange protocol."""

    pass


class DumpFormatError(WignerError, ValueError):
    """Raised for binary dumps with bad magic, version or size."""

    pass
