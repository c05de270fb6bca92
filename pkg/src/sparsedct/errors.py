"""Exception types shared across the package."""


class CodecError(ValueError):
    """A sequence, coefficient image, or conversion input violates an invariant."""


class FileFormatError(CodecError):
    """A binary container (sequence file or checkpoint) is malformed."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss; carries the diagnostic dump path."""

    def __init__(self, message: str, dump_path: str | None = None):
        super().__init__(message)
        self.dump_path = dump_path
