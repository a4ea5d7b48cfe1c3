"""Exception hierarchy shared by the pipeline stages and the CLI."""


class EphemapError(Exception):
    """Base exception for ephemap errors."""

    exit_code = 1


class InputValidationError(EphemapError):
    """Invalid session, malformed file or bad argument."""

    exit_code = 2


class FormatError(InputValidationError):
    """A file does not follow its declared format."""

    def __init__(self, message: str, path: object = None, line: int | None = None) -> None:
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location = f"{path}"
            if line is not None:
                location += f":{line}"
            location += ": "
        super().__init__(f"{location}{message}")


class SceneError(InputValidationError):
    """Scene description is invalid or cannot be rendered."""


class PipelineError(EphemapError):
    """A pipeline stage failed on valid input."""


class RegistrationError(PipelineError):
    """Scan registration could not be solved."""

    def __init__(self, message: str, condition: float | None = None) -> None:
        self.condition = condition
        super().__init__(message)


class LoopNotFoundError(PipelineError):
    """No anchor/session scan pair passed the similarity gate."""


class AlignmentError(PipelineError):
    """Zipper alignment failed for too many scans."""

    def __init__(self, message: str, diagnostics: list | None = None) -> None:
        self.diagnostics = diagnostics or []
        super().__init__(message)


class MapUpdateError(PipelineError):
    """Lifelong map update failed."""


class OracleLimitError(PipelineError):
    """Instance exceeds what the brute-force oracle accepts."""
