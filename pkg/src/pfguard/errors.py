"""Exception types shared across the package."""


class PfguardError(Exception):
    """Base class for all package-specific errors."""


class ContractViolationError(PfguardError, ValueError):
    """An operation was called with arguments violating its preconditions."""


class DegenerateEnsembleError(PfguardError):
    """All particle weights are zero: the measurements (or the prior) are
    totally incompatible with the ensemble. Callers decide recovery policy."""


class NoValidSupportError(PfguardError):
    """The fault prior assigns zero non-fault probability to every particle,
    so the non-fault measurement density is undefined for this sensor."""


class ParticleInvalidError(PfguardError):
    """Propagating a particle produced a non-finite state."""

    def __init__(self, particle_index: int, message: str = ""):
        self.particle_index = particle_index
        super().__init__(
            message or f"particle {particle_index} propagated to a non-finite state"
        )


class UnregisteredSensorError(PfguardError, KeyError):
    """A measurement batch referenced a sensor_id with no bound model."""


class SingularModelError(PfguardError):
    """The innovation covariance of a linear-Gaussian model is not invertible."""


class ConfigValidationError(PfguardError, ValueError):
    """A scenario configuration failed validation.

    Collects every violation found so the user can fix them in one pass.
    """

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__(
            "invalid configuration:\n" + "\n".join(f"  - {v}" for v in self.violations)
        )


class SchemaError(PfguardError, ValueError):
    """A CSV file did not match its expected schema."""

    def __init__(self, path: str, line: int, message: str):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class AlignmentError(PfguardError, ValueError):
    """Result files passed to evaluation do not share time indices / links."""
