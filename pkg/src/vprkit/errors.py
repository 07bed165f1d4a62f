"""Exception types raised across the toolkit."""


class InvalidInputError(ValueError):
    """Input violates a documented precondition."""


class DegenerateInputError(InvalidInputError):
    """Input is well-formed but the requested result is undefined."""


class FormatError(ValueError):
    """Binary or text file does not follow its declared layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingDivergedError(RuntimeError):
    """Raised by the toy trainer when the loss blows up."""
