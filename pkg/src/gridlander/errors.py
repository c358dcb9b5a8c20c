"""Shared exception types."""


class ContractViolation(ValueError):
    """An argument or state violates a documented precondition."""


class NumericFault(ArithmeticError):
    """A computation produced non-finite or diverging values."""
