"""Error taxonomy shared by every module.

StructuralError covers malformed inputs: bad shapes, invalid configurations,
unparseable documents. NumericalError covers runtime numerical failures such
as non-convergent iterations or non-finite losses. The CLI maps the former to
exit code 2 and the latter to exit code 1.
"""


class StructuralError(ValueError):
    """Input or configuration violates a structural precondition."""


class NumericalError(ArithmeticError):
    """A numerical procedure failed at runtime."""
