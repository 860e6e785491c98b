"""Exception hierarchy shared by every stage of the pipeline."""


class FedEcgError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(FedEcgError, ValueError):
    """Input does not have the expected structure (channel count, dims, registry)."""


class LabelError(FedEcgError, ValueError):
    """Diagnosis code outside the 27-code label set."""


class CapabilityError(FedEcgError, ValueError):
    """The operation cannot be performed on this input (too short, unsupported, empty)."""


class ArgumentError(FedEcgError, ValueError):
    """An argument is out of its allowed range."""


class StateError(FedEcgError, RuntimeError):
    """Objects passed together are inconsistent with each other."""


class ConfigurationError(FedEcgError, ValueError):
    """An experiment or federation configuration cannot be executed."""


class ConvergenceError(FedEcgError, RuntimeError):
    """An iterative protocol failed to bracket or converge."""
