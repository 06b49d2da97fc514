# recps/utils/exceptions.py
import logging
from typing import Any, Dict, Optional, Tuple

# Configure logger for exception handling
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME_FAILURE = 1
EXIT_USAGE_ERROR = 2


class RecPSError(Exception):
    """Base error for the toolkit, carrying a message and structured context."""

    exit_code = EXIT_RUNTIME_FAILURE
    error_type = "recps_error"

    def __init__(self, message: str, context: Optional[Dict[str, Any]] = None):
        self.message = message
        self.context = context or {}
        super().__init__(self.message)


class ConfigError(RecPSError):
    """Invalid, unknown or missing configuration values."""

    exit_code = EXIT_USAGE_ERROR
    error_type = "config_error"

    def __init__(self, message: str, field: str = None, value: Any = None):
        self.field = field
        self.value = value
        super().__init__(message, {"field": field, "value": value} if field else None)


class DatasetError(RecPSError):
    error_type = "dataset_error"


class MissingInputError(DatasetError):
    """An input file named on the command line does not exist."""

    exit_code = EXIT_USAGE_ERROR
    error_type = "missing_input"

    def __init__(self, path: str):
        self.path = str(path)
        super().__init__(f"Input file not found: {path}", {"path": self.path})


class DatasetParseError(DatasetError):
    error_type = "parse_error"

    def __init__(self, message: str, line_number: int = None, path: str = None):
        self.line_number = line_number
        self.path = path
        location = f" (line {line_number})" if line_number is not None else ""
        super().__init__(
            f"{message}{location}",
            {"line_number": line_number, "path": path},
        )


class EmptyDatasetError(DatasetError):
    error_type = "empty_dataset"


class SplitPreconditionError(DatasetError):
    error_type = "split_precondition"

    def __init__(self, message: str, user: str = None):
        self.user = user
        super().__init__(message, {"user": user})


class NegativeSamplingError(DatasetError):
    error_type = "negative_sampling"

    def __init__(self, user: str, required: int, available: int):
        self.user = user
        self.required = required
        self.available = available
        super().__init__(
            f"User {user} needs {required} negatives but only {available} unobserved items exist",
            {"user": user, "required": required, "available": available},
        )


class VocabularyError(RecPSError, IndexError):
    """A user or item id outside the vocabulary of a model or dataset."""

    error_type = "vocabulary_error"


class TrainingDivergedError(RecPSError):
    error_type = "training_diverged"

    def __init__(self, epoch: int, batch: int, loss: float):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(
            f"Non-finite loss {loss} at epoch {epoch}, batch {batch}",
            {"epoch": epoch, "batch": batch},
        )


class InsufficientSamplesError(RecPSError):
    error_type = "insufficient_samples"

    def __init__(self, required: int, got: int, what: str = "OUT samples"):
        self.required = required
        self.got = got
        super().__init__(
            f"Need at least {required} {what}, got {got}",
            {"required": required, "got": got},
        )


class EnsembleError(RecPSError):
    error_type = "ensemble_error"


class ProvenanceError(EnsembleError):
    """Manifest digest or referenced file hash does not match its content."""

    error_type = "provenance_error"


class DegenerateMembershipError(RecPSError):
    error_type = "degenerate_membership"

    def __init__(self, interaction: Tuple[int, int], in_count: int, m: int):
        self.interaction = interaction
        self.in_count = in_count
        super().__init__(
            f"Interaction {interaction} is IN for {in_count} of {m} shadow models; "
            "scoring needs at least one IN and one OUT model",
            {"interaction": list(interaction), "in_count": in_count, "m": m},
        )


class EvaluationError(RecPSError):
    error_type = "evaluation_error"


class RemovalError(RecPSError):
    error_type = "removal_error"


def error_response(exc: Exception) -> Dict[str, Any]:
    """
    Render an exception as the error dictionary written by the CLI.

    Args:
        exc: The exception that stopped a command

    Returns:
        Dictionary with status, type, message and context
    """
    if isinstance(exc, RecPSError):
        return {
            "error": {
                "status": exc.exit_code,
                "type": exc.error_type,
                "message": exc.message,
                "context": exc.context or None,
            }
        }
    return {
        "error": {
            "status": EXIT_RUNTIME_FAILURE,
            "type": "internal_error",
            "message": str(exc) or type(exc).__name__,
            "context": None,
        }
    }


def cli_error_handler(exc: Exception, command: str = None) -> int:
    """
    Log a command failure and map it to a process exit code.

    Args:
        exc: The exception raised by the command
        command: Name of the subcommand that failed

    Returns:
        Exit code (2 for usage/config errors, 1 for runtime failures)
    """
    response = error_response(exc)["error"]
    if isinstance(exc, RecPSError):
        log = logger.warning if exc.exit_code == EXIT_USAGE_ERROR else logger.error
        log(
            f"{command or 'command'} failed: {exc.message}",
            exc_info=exc if exc.exit_code != EXIT_USAGE_ERROR else None,
            extra={"error_type": exc.error_type, "context": exc.context, "command": command},
        )
        return exc.exit_code

    # Unhandled exceptions are logged as critical with full traceback
    logger.critical(
        f"Unhandled exception in {command or 'command'}: {response['message']}",
        exc_info=exc,
        extra={"exception_type": type(exc).__name__, "command": command},
    )
    return EXIT_RUNTIME_FAILURE
