"""Exception types shared across the package."""


class HypavgError(Exception):
    """Base class for all errors raised by :mod:`hypavg`."""


class NormalizationError(HypavgError, ValueError):
    """A phase point that must lie on the unit cosphere bundle does not."""


class OutOfCollarError(HypavgError, ValueError):
    """A point lies outside the Fermi collar of a hypersurface."""


class InadmissibleError(HypavgError, ValueError):
    """The semiclassical parameter is not on the family's quantization ladder."""


class ResolutionError(HypavgError, RuntimeError):
    """A quadrature or grid is too coarse for the requested integrand."""


class GlancingError(HypavgError, ValueError):
    """A transversal set touches the glancing region."""


class FitError(HypavgError, ValueError):
    """Too few usable points for a power-law fit."""


class ConfigError(HypavgError, ValueError):
    """An experiment configuration failed validation."""
