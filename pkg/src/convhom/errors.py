"""Exception types shared across the package."""


class HomogenizationError(ValueError):
    """Raised for invalid inputs or failed computations.

    ``code`` is a short machine-readable tag such as ``"no-free-sites"``;
    the message always starts with it.
    """

    def __init__(self, code, detail=None):
        self.code = code
        self.detail = detail
        msg = code if detail is None else f"{code}: {detail}"
        super().__init__(msg)

    def __reduce__(self):
        return (type(self), (self.code, self.detail))


class NoConvergence(HomogenizationError):
    """Iterative solve hit ``max_iter``; ``best`` holds the last iterate."""

    def __init__(self, best, detail=None):
        self.best = best
        super().__init__("no-convergence", detail)

    def __reduce__(self):
        return (type(self), (self.best, self.detail))
