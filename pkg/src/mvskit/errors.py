"""Exception types shared across the package.

CLI exit-code mapping: ContractError and ParseError exit 1, OSError exits 2.
"""


class MvsKitError(Exception):
    """Base class for all package-specific errors."""


class ContractError(MvsKitError):
    """A documented precondition or invariant was violated by the caller."""


class ParseError(MvsKitError):
    """A file could not be parsed; message carries path/offset context."""


class RefinementDiverged(MvsKitError):
    """Refinement loss became non-finite; carries the iteration index."""

    def __init__(self, iteration: int, message: str = ""):
        self.iteration = iteration
        super().__init__(message or f"loss became non-finite at iteration {iteration}")
