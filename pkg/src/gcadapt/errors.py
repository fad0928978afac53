"""Exception types shared across the package.

The CLI maps these onto exit codes: contract/load problems exit 1,
numeric failures (non-finite losses or gradients) exit 2.
"""


class ContractError(ValueError):
    """A precondition, shape, or configuration contract was violated."""


class LoadError(ContractError):
    """A dataset, config, or checkpoint file could not be parsed."""


class MetricError(ContractError):
    """A metric is undefined for the given inputs (e.g. AF with T=1)."""


class NumericError(ArithmeticError):
    """A loss or gradient became non-finite during optimization."""
