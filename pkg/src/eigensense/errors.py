"""Exception types shared across the package."""


class EigensenseError(Exception):
    """Base class for all package-specific errors."""


class InputError(EigensenseError, ValueError):
    """Malformed user data: bad files, non-finite entries, shape mismatches."""


class DomainError(EigensenseError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class NumericError(EigensenseError, RuntimeError):
    """A numerical procedure failed to reach its accuracy contract."""


class DegeneracyError(NumericError):
    """Eigenvalues remained coincident even after the deterministic guard."""
