"""Exception handling at the command-line boundary."""

import logging
import sys
from typing import Callable

from pydantic import ValidationError

from app.core.exceptions import AppException
from app.models.schemas import RunConfig

logger = logging.getLogger(__name__)

EXIT_DATA_ERROR = 65
EXIT_SOFTWARE = 70
EXIT_INTERRUPTED = 130


def app_exception_handler(config: RunConfig, exc: AppException) -> int:
    """
    Handle custom application exceptions.

    Args:
        config: Invocation that failed
        exc: Application exception

    Returns:
        The exception's exit code
    """
    logger.error(
        f"Application error: {exc.message}",
        extra={
            "subcommand": config.subcommand,
            "error": exc.__class__.__name__,
            "exit_code": exc.exit_code,
        }
    )
    print(f"error: {exc.message}", file=sys.stderr)
    return exc.exit_code


def validation_exception_handler(config: RunConfig, exc: ValidationError) -> int:
    """Input files that parse but fail schema validation."""
    logger.warning(
        f"Validation error: {exc.errors()}",
        extra={"subcommand": config.subcommand}
    )
    print(f"error: invalid input ({exc.error_count()} validation error(s))", file=sys.stderr)
    return EXIT_DATA_ERROR


def generic_exception_handler(config: RunConfig, exc: Exception) -> int:
    """Anything unexpected is a bug; log it with its traceback."""
    logger.error(
        f"Unexpected error: {str(exc)}",
        exc_info=True,
        extra={"subcommand": config.subcommand}
    )
    print("error: an unexpected error occurred", file=sys.stderr)
    return EXIT_SOFTWARE


def run_command(handler: Callable[[RunConfig], int], config: RunConfig) -> int:
    """Run a subcommand handler and turn any exception into an exit code."""
    try:
        return handler(config)
    except AppException as exc:
        return app_exception_handler(config, exc)
    except ValidationError as exc:
        return validation_exception_handler(config, exc)
    except KeyboardInterrupt:
        logger.info("Interrupted", extra={"subcommand": config.subcommand})
        return EXIT_INTERRUPTED
    except Exception as exc:
        return generic_exception_handler(config, exc)
