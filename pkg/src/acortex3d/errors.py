"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes (see ``acortex3d.cli``).
"""


class AcortexError(Exception):
    """Base class for every error raised by this package."""


class DomainError(AcortexError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class OutputRangeError(DomainError):
    """A decoded pulse exceeds its window (simulation overflow)."""


class NumericalError(AcortexError, ArithmeticError):
    """An iterative solver failed to converge."""


class ConfigurationError(AcortexError, ValueError):
    """Invalid or incomplete configuration (arch config, catalog, tables)."""


class ContractError(AcortexError, ValueError):
    """A caller violated an operation precondition."""


class GraphFormatError(AcortexError, ValueError):
    """A network graph file is malformed, cyclic or dangling."""


class CapacityError(AcortexError):
    """Weight demand exceeds the available NAND layers."""

    def __init__(self, message: str, shortfall_layers: int = 0):
        super().__init__(message)
        self.shortfall_layers = shortfall_layers
