"""Exception types shared across the toolkit."""


class ConfigError(ValueError):
    """Invalid numerology or detector configuration."""


class ScenarioError(ValueError):
    """Scenario violates a model assumption (e.g. round-trip delay beyond the CP)."""


class IllConditionedAtomsError(RuntimeError):
    """Atom Gram matrix is numerically singular (detected CFOs too close)."""
