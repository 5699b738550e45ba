"""Exception types raised by pgop."""


class PgopError(Exception):
    """Base class for library errors."""


class InvalidMdpError(PgopError, ValueError):
    pass


class InvalidPolicyError(PgopError, ValueError):
    pass


class SupportError(PgopError, ValueError):
    """A divergence or bound was asked for outside its support condition."""


class PositivityError(PgopError, ValueError):
    """Returns or Q-values violate the nonnegativity an operator needs."""


class DegenerateError(PgopError, ValueError):
    """Nothing to improve: zero expected return or every state below the value floor."""


class EnumerationLimitError(PgopError, RuntimeError):
    pass


class ProjectionError(PgopError, RuntimeError):
    """A projection solver produced a non-finite objective or cannot handle the request."""


class ConfigError(PgopError, ValueError):
    pass
