class LoadError(RuntimeError):
    """Weights or input files could not be loaded."""


class ConfigError(ValueError):
    """Invalid job configuration (bad key, missing mode input, bad value)."""


class DivergenceError(RuntimeError):
    """The synthesis loss became non-finite."""

    def __init__(self, iteration, value):
        super().__init__(f"non-finite total loss ({value}) at iteration {iteration}")
        self.iteration = iteration
