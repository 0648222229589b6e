"""Custom exceptions and error handlers for the toolkit.

Domain errors intentionally derive from ``Exception`` rather than ``ValueError``:
pydantic only folds ``ValueError``/``AssertionError`` into its own
``ValidationError``, so raising these from a validator keeps their context.
"""

import functools
import logging
from typing import Optional

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NOT_CONVERGED = 2


class RefChoiceError(Exception):
    """Base toolkit exception class."""

    def __init__(
        self,
        message: str,
        exit_code: int = EXIT_VALIDATION,
        detail: Optional[str] = None
    ):
        self.message = message
        self.exit_code = exit_code
        self.detail = detail
        super().__init__(self.message)


class DataValidationError(RefChoiceError):
    """Raised when an input file or record is malformed."""

    def __init__(self, message: str, row: Optional[int] = None, detail: Optional[str] = None):
        self.row = row
        where = f" (row {row})" if row is not None else ""
        super().__init__(message=f"{message}{where}", detail=detail)


class ComparisonRelationError(DataValidationError):
    """Raised when an EV/ICEV pair breaks one of the comparison relations."""

    def __init__(self, task_id: str, relation: str, respondent_id: Optional[str] = None):
        self.task_id = task_id
        self.relation = relation
        owner = f" of respondent {respondent_id}" if respondent_id else ""
        super().__init__(
            message=f"Task {task_id}{owner} violates comparison relation: {relation}",
            detail="EV must be dearer, shorter-ranged, slower to fast-charge, cheaper to run "
                   "and have sparser chargers than the ICEV."
        )


class IndicatorDomainError(DataValidationError):
    """Raised when an ordinal indicator lies outside 1..5."""

    def __init__(self, indicator: str, respondent_id: str, value):
        self.indicator = indicator
        self.respondent_id = respondent_id
        super().__init__(
            message=f"Indicator {indicator} of respondent {respondent_id} has value {value}; expected 1..5"
        )


class UnknownCategoryError(DataValidationError):
    """Raised when a demographic level is not in its closed vocabulary."""

    def __init__(self, field: str, level, allowed):
        self.field = field
        self.level = level
        super().__init__(
            message=f"Unknown {field} level '{level}'",
            detail=f"Allowed levels: {', '.join(allowed)}"
        )


class DuplicateRespondentError(DataValidationError):
    """Raised when a respondent id occurs twice."""

    def __init__(self, respondent_id: str):
        super().__init__(message=f"Duplicate respondent id {respondent_id}")


class InvalidInputError(RefChoiceError):
    """Raised when a scalar precondition is violated."""

    def __init__(self, detail: str):
        super().__init__(message="Invalid input", detail=detail)

    def __str__(self) -> str:
        return f"{self.message}: {self.detail}"


class DesignSpecError(RefChoiceError):
    """Raised when a design specification cannot yield a balanced, relation-safe bank."""

    def __init__(self, detail: str):
        super().__init__(message="Invalid design specification", detail=detail)

    def __str__(self) -> str:
        return f"{self.message}: {self.detail}"


class ModelSpecError(RefChoiceError):
    """Raised when a model specification is inconsistent."""

    def __init__(self, detail: str):
        super().__init__(message="Invalid model specification", detail=detail)

    def __str__(self) -> str:
        return f"{self.message}: {self.detail}"


class ParameterError(RefChoiceError):
    """Raised when parameter values break their invariants."""

    def __init__(self, detail: str):
        super().__init__(message="Invalid parameters", detail=detail)

    def __str__(self) -> str:
        return f"{self.message}: {self.detail}"


class GaussianDomainError(RefChoiceError):
    """Raised when a bivariate normal request has |rho| >= 1 or bad bounds."""

    def __init__(self, detail: str):
        super().__init__(message="Gaussian domain error", detail=detail)

    def __str__(self) -> str:
        return f"{self.message}: {self.detail}"


class NonFiniteObjectiveError(RefChoiceError):
    """Raised when a respondent's composite log-likelihood is not finite."""

    def __init__(self, respondent_id: str, value: float):
        self.respondent_id = respondent_id
        super().__init__(
            message=f"Non-finite composite log-likelihood for respondent {respondent_id}",
            detail=f"value={value}"
        )


class SingularityError(RefChoiceError):
    """Raised when a curved marginal utility is evaluated at zero deviation."""

    def __init__(self, attribute: str, deviation: float):
        self.attribute = attribute
        super().__init__(
            message=f"Marginal utility of {attribute} is singular at deviation {deviation:g}",
            detail="Curvature below 1 needs |deviation| >= 1e-6 in model units."
        )


class ZeroPriceMarginalError(RefChoiceError):
    """Raised when the price marginal utility vanishes."""

    def __init__(self):
        super().__init__(message="Marginal utility of price is zero; WTP undefined")


class DiscountRateDomainError(RefChoiceError):
    """Raised when the annuity equation has no root in the search bracket."""

    def __init__(self, detail: str):
        super().__init__(message="No discount rate solves the annuity equation", detail=detail)

    def __str__(self) -> str:
        return f"{self.message}: {self.detail}"


class ManifestMismatchError(RefChoiceError):
    """Raised when an input no longer matches the digest in a run manifest."""

    def __init__(self, path: str):
        super().__init__(message=f"Input {path} does not match its manifest digest")


def cli_exception_handler(exc: Exception) -> int:
    """Log an exception and map it to a process exit code."""
    if isinstance(exc, RefChoiceError):
        if exc.detail:
            logger.error(f"{exc.message} - {exc.detail}")
        else:
            logger.error(exc.message)
        return exc.exit_code

    logger.error(f"Unexpected error: {str(exc)}", exc_info=True)
    return EXIT_VALIDATION


def handle_io_error(func):
    """Decorator turning file and parser failures into DataValidationError."""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except RefChoiceError:
            raise
        except (OSError, UnicodeDecodeError) as e:
            logger.error(f"I/O error in {func.__name__}: {str(e)}")
            raise DataValidationError(
                message=f"Cannot read or write file in {func.__name__}",
                detail=str(e)
            )
    return wrapper
