class ConformalError(Exception):
    """Base class for every error raised by conformal_efficiency."""


class EnumerationCapExceeded(ConformalError):
    def __init__(self, what: str, required: int, cap: int):
        self.what = what
        self.required = required
        self.cap = cap
        super().__init__(
            f"Enumerating {what} needs {required} sequences but the cap is {cap}; "
            f"rerun with a cap of at least {required}."
        )


class FlavorMismatch(ConformalError):
    pass


class ArityMismatch(ConformalError):
    pass


class DomainViolation(ConformalError, ValueError):
    pass


class UnknownScenario(ConformalError, KeyError):
    def __init__(self, name: str, known):
        self.name = name
        super().__init__(f"Unknown scenario '{name}'. Known scenarios: {', '.join(sorted(known))}")

    def __str__(self):
        return self.args[0]


class PredictorFileError(ConformalError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class SearchIndeterminate(ConformalError):
    pass
