"""Exception types shared across the package."""


class DomainError(ValueError):
    """A state or parameter lies outside the admissible domain."""


class NumericError(RuntimeError):
    """A numerical procedure failed (singular system, quadrature, residual breach)."""


class BracketError(ValueError):
    """A root bracket does not contain a sign change."""


class ConstructionError(RuntimeError):
    """No admissible construction case applies to the problem."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
