"""Exception hierarchy shared across the package."""


class TouchCreditError(Exception):
    """Base class for all package-specific errors."""


class DatasetParseError(TouchCreditError):
    """A dataset file line could not be parsed. Carries the line number."""

    def __init__(self, message: str, line_number: int | None = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class DatasetValidationError(TouchCreditError):
    """Record contents violate the dataset declaration (alphabet, length, ...)."""


class EstimationError(TouchCreditError):
    """An estimator was asked to fit on unusable data (e.g. an empty dataset)."""


class UndefinedConditionalError(TouchCreditError):
    """A conditional ratio was requested where the conditioning mass is zero."""


class UnseenScenarioError(TouchCreditError):
    """A value was requested for a scenario the model has never observed."""


class TrainingError(TouchCreditError):
    """Model training failed (divergence, non-finite loss)."""


class MetricError(TouchCreditError):
    """A metric could not be evaluated (non-finite result, empty input)."""


class UndefinedMetricError(MetricError):
    """The metric is undefined for this input (e.g. no positive labels)."""


class IngestError(TouchCreditError):
    """The raw-impression ingestion pipeline failed."""


class SchemaError(IngestError):
    """The ingestion schema configuration is unusable."""
