"""Exception types shared by the pipeline, and the exit codes the CLI maps them to."""

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class CineSpokeError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(CineSpokeError):
    """Invalid or incomplete experiment configuration."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class NumericalError(CineSpokeError):
    """Non-finite losses, gradients or parameters, or a failed estimate."""


class FormatError(CineSpokeError):
    """A tensor bundle that cannot be decoded (magic, version, checksum)."""


class StageError(CineSpokeError):
    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        return exit_code_for(exc.cause)
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    return EXIT_FAILURE
