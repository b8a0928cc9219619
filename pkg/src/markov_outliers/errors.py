"""Exception types shared across the package.

The CLI maps these onto exit codes: ``ConfigError`` -> 2,
``BudgetExceeded`` -> 3.
"""


class ConfigError(ValueError):
    """Bad input: malformed documents, missing or out-of-range parameters."""


class ShapeMismatch(ConfigError):
    """An observation was handed to a bound that belongs to a different test shape."""

    def __init__(self, expected: str, got: str | None):
        self.expected = expected
        self.got = got
        super().__init__(
            f"observation has shape {got!r}; this bound needs a sample from the {expected!r} sampler"
        )


class IsolatedVertexError(ConfigError):
    def __init__(self, vertex):
        self.vertex = vertex
        super().__init__(f"vertex {vertex!r} has no incident edge")


class BudgetExceeded(RuntimeError):
    """Exact computation would exceed the configured work budget."""

    def __init__(self, required: float, budget: float, what: str = "computation"):
        self.required = required
        self.budget = budget
        super().__init__(
            f"{what} needs about {required:.3g} operations, budget is {budget:.3g}"
        )


class ValueExplosion(BudgetExceeded):
    """Too many distinct label sums to count exactly."""

    def __init__(self, required: float, budget: float):
        super().__init__(required, budget, what="exact event counting")
        self.args = (
            f"{self.args[0]}; labels look continuous. Exact counting needs a few discrete "
            "values per region, and binning them would make the count approximate",
        )
