class ConfigError(ValueError):
    """Scenario configuration violates a type invariant."""


class SaturationError(ValueError):
    """A control sits on or outside its saturation bound."""


class LearningDivergence(FloatingPointError):
    """Non-finite quantity entered a critic or actor update."""


class SimulationDivergence(FloatingPointError):
    """Non-finite joint state during integration."""


class RankDeficiencyError(ValueError):
    """Policy-evaluation regression is singular for the sampled states."""


class NonConvergence(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history
