"""Exception hierarchy shared by all modules."""


class StochNSError(Exception):
    """Base class for every error raised by the package."""


class InvalidFieldError(StochNSError, ValueError):
    """A field violates Hermitian symmetry, has the wrong shape, or lives on another grid."""


class GridMismatchError(InvalidFieldError):
    pass


class VacuumError(StochNSError, ValueError):
    """A density (or r) value is nonpositive at some collocation node."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class SingularCoefficientError(VacuumError):
    """r dropped below the configured floor, so D(r) is not controlled."""


class CFLViolation(StochNSError):
    """The requested step violates an advective or viscous step restriction."""

    def __init__(self, message, advective=0.0, viscous=0.0):
        super().__init__(message)
        self.advective = advective
        self.viscous = viscous


class WindowTooLongError(StochNSError):
    """Picard iteration failed to contract on the requested window."""


class GuardInconsistencyError(StochNSError):
    """A guard inequality failed before tau_K (bad K(R) or embedding constant)."""


class ShellScheduleError(StochNSError):
    """No shell within the configured schedule bound admits the datum."""


class NoiseHypothesisError(StochNSError):
    """Raised by a strict noise validation when (FG1)/(FG2)-type checks fail."""

    def __init__(self, message, offenders=()):
        super().__init__(message)
        self.offenders = list(offenders)


class ProtocolError(StochNSError):
    """Coupled runs were not driven by a common stream over the same steps."""


class ConfigError(StochNSError, ValueError):
    """Configuration text is malformed or violates a constraint."""

    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


class SnapshotError(StochNSError):
    """Snapshot file failed validation (magic, version, checksum, dimensions)."""


class ChecksumError(SnapshotError):
    pass


class AuditFailure(StochNSError):
    """A maximum-principle or other run audit detected an integrator defect."""
