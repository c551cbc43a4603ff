"""Exception types shared across the package."""


class RenormflowError(Exception):
    """Base class for all package errors."""


class MalformedFunctionError(RenormflowError):
    """A diffusion function returned a non-finite or negative value."""


class DegeneratePairError(RenormflowError):
    """Requested coefficients produce an identically-zero component."""


class OperatorDomainError(RenormflowError):
    """The transformation is not defined for these parameters (growth too fast)."""


class DivergenceError(OperatorDomainError):
    """Closed-form iteration left the domain: the image is infinite."""


class ForbiddenStartError(RenormflowError):
    """Start state for which the SDE is not known to be well posed."""


class BlowUpError(RenormflowError):
    """A simulated coordinate exceeded the overflow guard."""


class InfinityAnchorError(RenormflowError):
    """Inverse compactification requested at a point mapped to infinity."""


class ConfigError(RenormflowError):
    """Experiment configuration is missing, malformed, or inconsistent."""
