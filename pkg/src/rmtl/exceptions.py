"""Exception hierarchy shared across the package."""


class RmtlError(Exception):
    """Base class for all errors raised by :mod:`rmtl`."""


class DomainError(RmtlError, ValueError):
    """An argument lies outside the domain of the operation."""


class InputError(DomainError):
    """Malformed user input (CSV rows, contrast files, configs)."""


class ContrastError(DomainError):
    """A hypothesis matrix violates one or more required invariants.

    ``violations`` holds one human-readable message per problem found.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class NumericalError(RmtlError, ArithmeticError):
    """A numerical kernel could not produce a meaningful result."""


class NotPSDError(NumericalError):
    """A matrix expected to be positive semi-definite has a materially negative eigenvalue."""


class DegenerateTestError(NumericalError):
    """The studentizing matrix has rank zero, so no test can be carried out."""
