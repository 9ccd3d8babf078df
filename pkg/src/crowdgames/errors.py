"""Exception types shared across the library."""

__all__ = ["InvalidInputError", "ConfigError"]


class InvalidInputError(ValueError):
    """A caller-supplied value violates an operation's preconditions."""


class ConfigError(InvalidInputError):
    """A config file failed to parse or validate.

    Carries an optional ``line`` (1-based) locating the problem in the
    source text; ``str()`` includes it when present.
    """

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:"
            if line is not None:
                where += f"{line}:"
            where += " "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
