class DesignError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class ConsistencyError(ArithmeticError):
    pass


class IntegrationError(ArithmeticError):
    def __init__(self, msg: str, *, achieved: float) -> None:
        super().__init__(msg)
        self.achieved = achieved


class StateSpaceTooLarge(RuntimeError):
    def __init__(self, msg: str, *, estimate: int, cap: int) -> None:
        super().__init__(msg)
        self.estimate = estimate
        self.cap = cap
