"""Exception hierarchy shared by all spanmon modules.

The CLI maps these onto stable exit codes: configuration problems exit 2,
transport problems exit 3, analysis problems exit 4.
"""


class SpanmonError(Exception):
    """Base class for all spanmon errors."""


class ConfigError(SpanmonError):
    """Invalid configuration, scenario, or command-line input."""


class DomainError(SpanmonError, ValueError):
    """Numeric argument outside the valid domain of an operation."""


class AcquisitionError(SpanmonError):
    """Ground-truth window does not cover the requested acquisition."""


class TransportError(SpanmonError):
    """Base class for uplink transport failures."""


class ConnectError(TransportError):
    """A single connection attempt failed."""


class AckTimeout(TransportError):
    """No acknowledgement arrived within the ACK timeout."""


class ConnectionLost(TransportError):
    """The connection dropped mid-session."""


class UplinkUnreachable(TransportError):
    """All connection attempts were exhausted."""

    def __init__(self, attempts):
        super().__init__(f"server unreachable after {attempts} connection attempts")
        self.attempts = attempts


class RetryCeilingExceeded(TransportError):
    """Test-only resend ceiling hit; production behaviour retries forever."""


class ProtocolError(SpanmonError):
    """Malformed acknowledgement line."""


class FramingError(SpanmonError):
    """Byte frame is not valid hex framing."""


class SchemaError(SpanmonError):
    """Decoded JSON violates the packet schema."""


class IntegrityError(SpanmonError):
    """Conflicting duplicate: same key, different content."""


class StoreError(SpanmonError):
    """Record store is unreadable beyond tail repair."""


class AnalysisError(SpanmonError):
    """Base class for analysis pipeline failures."""


class NoPeakError(AnalysisError):
    """No dominant spectral peak above the noise floor."""

    marker = "no-peak"


class DegenerateScalingError(AnalysisError):
    """Strain-shape spectral power vanishes at the dominant frequency."""


class BasisError(AnalysisError):
    """Mode basis is rank deficient or inconsistent with the data."""


class FitError(AnalysisError):
    """Statistical fit failed (for example mixture variance collapse)."""
