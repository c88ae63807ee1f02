"""Exception hierarchy shared by every module."""


class SleLqgError(Exception):
    """Base class for all errors raised by :mod:`sle_lqg`."""


class DomainError(SleLqgError, ValueError):
    """A parameter lies outside the range where the quantity is defined."""


class SingularityError(SleLqgError, ValueError):
    """Evaluation at a singular point (origin, real axis, coincident points)."""


class LifecycleError(SleLqgError):
    """A forward-flow point was used after it had been swallowed."""


class AbsorbedError(SleLqgError):
    """A real boundary point hit the seed of the reverse flow."""


class NoPartnerError(SleLqgError):
    """A boundary point has no welded partner at the requested time."""


class GeometryError(SleLqgError, ValueError):
    """A stencil or mapped point falls outside the sampled grid."""


class ConfigError(SleLqgError, ValueError):
    """Unsupported or inconsistent configuration."""


class ConsistencyError(SleLqgError, AssertionError):
    """Two closed forms of the same quantity disagree beyond tolerance."""
