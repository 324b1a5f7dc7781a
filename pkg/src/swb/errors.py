"""Exception types raised across the package."""


class SwbError(Exception):
    """Base class for all package errors."""


class InvalidArgument(SwbError, ValueError):
    """An argument violates a documented precondition."""


class DegenerateGeodesic(InvalidArgument):
    """The geodesic between two points is not unique (antipodal sphere points)."""


class EmptyState(SwbError):
    """An estimate was requested before any iteration was recorded."""


class InstanceTooLarge(SwbError):
    """A desk-scale exact solver was handed an instance beyond its cap."""


class ProtocolError(SwbError):
    """A peer sent a malformed frame or an out-of-range index."""


class HandshakeError(ProtocolError):
    """Master and worker disagree on the run parameters."""


class ChannelClosed(SwbError):
    """The peer closed the channel."""
