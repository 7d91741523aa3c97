"""Exception types shared across the package."""


class FcacError(Exception):
    """Base class for all package errors."""


class ShapeError(FcacError, ValueError):
    pass


class InvalidInputError(FcacError, ValueError):
    pass


class StateError(FcacError, RuntimeError):
    """Operation not allowed in the object's current state (e.g. training a frozen model)."""


class NotFoundError(FcacError, KeyError):
    pass


class FormatError(FcacError, ValueError):
    """Malformed or corrupted file."""


class VersionMismatchError(FormatError):
    pass


class ProtocolError(FcacError, ValueError):
    """Violation of the incremental-session protocol (label collisions, overlapping sessions)."""


class ManifestError(FcacError, ValueError):
    pass


class ConfigError(FcacError, ValueError):
    pass
