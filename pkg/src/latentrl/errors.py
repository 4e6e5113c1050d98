"""Exception hierarchy.

Every error raised by the package derives from :class:`LatentRLError`, so
callers can catch the whole family at once. The CLI maps them to exit codes.
"""


class LatentRLError(Exception):
    exit_code = 1


class ConfigError(LatentRLError, ValueError):
    exit_code = 2


class SpecError(LatentRLError, ValueError):
    exit_code = 2


class DomainError(LatentRLError, ValueError):
    pass


class GroupError(LatentRLError, ValueError):
    pass


class ShapeError(LatentRLError, ValueError):
    pass


class NormError(LatentRLError, ValueError):
    pass


class BudgetError(LatentRLError, ValueError):
    exit_code = 2


class NumericalError(LatentRLError, ArithmeticError):
    exit_code = 3


class ChecksumError(LatentRLError):
    exit_code = 4
