"""Exception hierarchy shared by every STRATA module."""


class StrataError(Exception):
    """Base class for all library errors."""


class EvaluationError(StrataError):
    """A tape node produced a non-finite value or partial derivative."""

    def __init__(self, node: int, kind: str, detail: str = ""):
        self.node = node
        self.kind = kind
        msg = f"non-finite result at node {node} ({kind})"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class DomainError(StrataError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class ContractError(StrataError, ValueError):
    """Caller violated a shape or usage contract."""


class ConfigurationError(StrataError):
    """Invalid scene, fit or experiment configuration."""


class DegenerateInputError(StrataError):
    """Input leaves nothing to optimize or evaluate (e.g. no valid pixels)."""


class OptimizationError(StrataError):
    """Optimizer received unusable gradients."""

    def __init__(self, block: str, detail: str):
        self.block = block
        super().__init__(f"parameter block '{block}': {detail}")
