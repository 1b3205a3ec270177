"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A topology, training, or experiment configuration violates a constraint."""


class ContractError(ValueError):
    """An argument has the wrong shape or violates a documented precondition."""


class DivergenceError(RuntimeError):
    """Training produced non-finite model entries."""

    def __init__(self, round_index: int, message: str | None = None):
        self.round = round_index
        super().__init__(message or f"non-finite model entries at round {round_index}")
