"""
Error types and detailed error reporting for the analysis toolkit
Provides categorized error responses, logging and CLI exit codes
"""

from typing import Optional, Dict, Any
from enum import Enum
import logging
import traceback
from datetime import datetime, timezone

logger = logging.getLogger(__name__)


class CPRError(ValueError):
    """Base class for all errors raised by the analysis code"""


class DomainError(CPRError):
    """An argument lies outside the mathematical domain of an operation"""


class DimensionError(CPRError):
    """Vector lengths do not match the number of classes"""


class PreconditionError(CPRError):
    """A hypothesis required by an operation does not hold"""


class BracketError(CPRError):
    """A bisection bracket does not straddle the criterion boundary"""


class ResourceGuardError(CPRError):
    """A requested computation exceeds a configured size cap"""


class NonConvergenceError(CPRError):
    """A fixed-point iteration did not converge and strict mode is on"""


class ConfigError(CPRError):
    """A configuration file violates the schema or a model invariant"""

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        self.detail = message
        self.field = field
        self.line = line
        location = ""
        if field:
            location += f" [field: {field}]"
        if line:
            location += f" [line {line}]"
        super().__init__(f"{message}{location}")


class ErrorCategory(str, Enum):
    """Error categories for classification"""
    CONFIG = "config"
    VALIDATION = "validation"
    DOMAIN = "domain"
    NUMERICAL = "numerical"
    RESOURCE = "resource"
    FILE_SYSTEM = "file_system"
    UNKNOWN = "unknown"


class ErrorSeverity(str, Enum):
    """Error severity levels"""
    INFO = "info"
    WARNING = "warning"
    ERROR = "error"
    CRITICAL = "critical"


EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NONCONVERGENCE = 3


class DetailedError:
    """Represents a detailed error with context"""

    def __init__(
        self,
        title: str,
        message: str,
        category: ErrorCategory = ErrorCategory.UNKNOWN,
        severity: ErrorSeverity = ErrorSeverity.ERROR,
        technical_details: Optional[str] = None,
        context: Optional[Dict[str, Any]] = None,
        suggestions: Optional[list[str]] = None,
        exit_code: int = EXIT_FAILURE,
    ):
        self.title = title
        self.message = message
        self.category = category
        self.severity = severity
        self.technical_details = technical_details
        self.context = context or {}
        self.suggestions = suggestions or []
        self.exit_code = exit_code
        self.timestamp = datetime.now(timezone.utc)

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for JSON output"""
        return {
            "title": self.title,
            "message": self.message,
            "category": self.category.value,
            "severity": self.severity.value,
            "technical_details": self.technical_details,
            "context": self.context,
            "suggestions": self.suggestions,
            "exit_code": self.exit_code,
            "timestamp": self.timestamp.isoformat(),
        }


def create_error_response(
    exception: Exception,
    context: Optional[Dict[str, Any]] = None
) -> DetailedError:
    """
    Create a detailed error response from an exception

    Args:
        exception: The exception that occurred
        context: Additional context information

    Returns:
        DetailedError object with categorized information
    """
    error_message = str(exception)
    error_type = type(exception).__name__
    context = context or {}

    if isinstance(exception, ConfigError):
        if exception.field:
            context = {**context, "field": exception.field}
        if exception.line:
            context = {**context, "line": exception.line}
        return DetailedError(
            title="Invalid Configuration",
            message=error_message,
            category=ErrorCategory.CONFIG,
            severity=ErrorSeverity.ERROR,
            technical_details=f"{error_type}: {error_message}",
            context=context,
            suggestions=[
                "Check the field named in the message against the documented schema",
                "Routing rows and receiver fractions must each sum to 1",
                "Degree weights must be nonnegative, sum to 1 and put no mass on degree 0",
            ],
            exit_code=EXIT_CONFIG,
        )

    if isinstance(exception, NonConvergenceError):
        return DetailedError(
            title="Fixed Point Did Not Converge",
            message=error_message,
            category=ErrorCategory.NUMERICAL,
            severity=ErrorSeverity.WARNING,
            technical_details=f"{error_type}: {error_message}",
            context=context,
            suggestions=[
                "Raise the iteration cap (CPRSTAB_DE_MAX_ITER)",
                "Loosen the tolerance, or rerun without --strict to accept Indeterminate",
            ],
            exit_code=EXIT_NONCONVERGENCE,
        )

    if isinstance(exception, ResourceGuardError):
        return DetailedError(
            title="Computation Too Large",
            message=error_message,
            category=ErrorCategory.RESOURCE,
            severity=ErrorSeverity.ERROR,
            technical_details=f"{error_type}: {error_message}",
            context=context,
            suggestions=[
                "Use a coarser grid step",
                "Raise CPRSTAB_REGION_MAX_CELLS if the run is intended",
            ],
        )

    if isinstance(exception, (DomainError, DimensionError, PreconditionError, BracketError)):
        return DetailedError(
            title="Invalid Arguments",
            message=error_message,
            category=ErrorCategory.DOMAIN,
            severity=ErrorSeverity.ERROR,
            technical_details=f"{error_type}: {error_message}",
            context=context,
            suggestions=[
                "Check the load vector length against the number of user classes",
                "Degree-1 mass invalidates epsilon-stability and inverse excess checks",
            ],
        )

    if isinstance(exception, FileNotFoundError):
        return DetailedError(
            title="File Not Found",
            message=f"The requested file could not be found: {error_message}",
            category=ErrorCategory.FILE_SYSTEM,
            severity=ErrorSeverity.ERROR,
            technical_details=f"{error_type}: {error_message}",
            context=context,
            suggestions=[
                "Verify the config path is correct",
                "Use --preset to load a bundled configuration",
            ],
            exit_code=EXIT_CONFIG,
        )

    if isinstance(exception, PermissionError):
        return DetailedError(
            title="Permission Denied",
            message="The output directory is not writable.",
            category=ErrorCategory.FILE_SYSTEM,
            severity=ErrorSeverity.ERROR,
            technical_details=f"{error_type}: {error_message}",
            context=context,
            suggestions=["Choose another --out directory or set CPRSTAB_OUTPUT_DIR"],
        )

    if isinstance(exception, ValueError):
        return DetailedError(
            title="Invalid Input",
            message=f"The provided input is invalid: {error_message}",
            category=ErrorCategory.VALIDATION,
            severity=ErrorSeverity.WARNING,
            technical_details=f"{error_type}: {error_message}",
            context=context,
            suggestions=["Check your flag values"],
        )

    return DetailedError(
        title="An Error Occurred",
        message=error_message or "An unexpected error occurred.",
        category=ErrorCategory.UNKNOWN,
        severity=ErrorSeverity.CRITICAL,
        technical_details=f"{error_type}: {error_message}\n\nTraceback:\n{traceback.format_exc()}",
        context=context,
        suggestions=[
            "Rerun with --log-level DEBUG",
            "Report this issue if it persists",
        ],
    )


def exit_code_for(exception: Exception) -> int:
    """Process exit status for an exception escaping a CLI command"""
    if isinstance(exception, (ConfigError, FileNotFoundError)):
        return EXIT_CONFIG
    if isinstance(exception, NonConvergenceError):
        return EXIT_NONCONVERGENCE
    return EXIT_FAILURE


def log_detailed_error(error: DetailedError, logger_instance: logging.Logger = None):
    """
    Log a detailed error with appropriate severity

    Args:
        error: The DetailedError to log
        logger_instance: Optional logger instance to use
    """
    log = logger_instance or logger

    log_message = f"{error.title}: {error.message}"
    if error.context:
        log_message += f" | Context: {error.context}"

    if error.severity == ErrorSeverity.CRITICAL:
        log.critical(log_message)
        if error.technical_details:
            log.critical(f"Technical details: {error.technical_details}")
    elif error.severity == ErrorSeverity.ERROR:
        log.error(log_message)
        if error.technical_details:
            log.debug(f"Technical details: {error.technical_details}")
    elif error.severity == ErrorSeverity.WARNING:
        log.warning(log_message)
    else:
        log.info(log_message)
    for suggestion in error.suggestions:
        log.info(f"  hint: {suggestion}")
