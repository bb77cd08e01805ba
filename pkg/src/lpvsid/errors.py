"""Exception hierarchy."""


class LpvSidError(Exception):
    """Base class for package errors."""


class DimensionError(LpvSidError, ValueError):
    """Inconsistent array sizes."""


class DomainError(LpvSidError, ValueError):
    """Scheduling value outside the basis domain or unbounded basis."""


class ModelFormatError(LpvSidError, ValueError):
    """Unreadable or malformed model document."""


class DataError(LpvSidError, ValueError):
    """Data record too short or otherwise unusable."""


class HorizonError(LpvSidError, ValueError):
    """Window or coefficient horizon incompatible with the request."""


class RegressionSizeError(LpvSidError, ValueError):
    """Regression problem too large to solve in memory."""


class RankDeficiencyError(LpvSidError, ValueError):
    """Regressor without full row rank (lack of excitation)."""


class PersistencyError(LpvSidError, ValueError):
    """Covariance needed for whitening is singular."""


class OrderError(LpvSidError, ValueError):
    """Requested model order exceeds the available rank."""


class NotStableError(LpvSidError, ValueError):
    """System failed the empirical stability test."""
