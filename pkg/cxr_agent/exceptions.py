"""
Exception hierarchy for CXRAgent.

Every error raised by the package derives from CxrAgentError, with one
intermediate base per concern so batch commands can catch a whole family.
"""

from typing import Optional


class CxrAgentError(Exception):
    """Base class for all CXRAgent exceptions."""


class ConfigError(CxrAgentError):
    """Configuration file is unreadable or fails validation."""


# Studies -------------------------------------------------------------------


class StudyError(CxrAgentError):
    """A study record violates its invariants."""


class MissingImage(StudyError):
    """Neither a frontal nor a lateral image is present."""


class BadPixelBuffer(StudyError):
    """Pixel buffer length or value range does not match the declared image."""


# Radiomics ------------------------------------------------------------------


class RadiomicsError(CxrAgentError):
    """Base class for radiomic feature extraction errors."""


class EmptyImage(RadiomicsError):
    """Image has no pixels."""


class DegenerateImage(RadiomicsError):
    """No valid co-occurring pixel pair exists."""


class NotNormalized(RadiomicsError):
    """Co-occurrence matrix does not sum to one."""


class ImageTooSmall(RadiomicsError):
    """Image has no interior pixel for the configured LBP radius."""


# Explainability --------------------------------------------------------------


class XaiError(CxrAgentError):
    """Base class for Grad-CAM errors."""


class EmptyTensor(XaiError):
    """Tensor holds no values."""


class ShapeMismatch(XaiError):
    """Tensor shapes or channel counts disagree."""


# Context ---------------------------------------------------------------------


class ContextError(CxrAgentError):
    """Base class for vocabulary and feature-card errors."""


class EmptyVocabulary(ContextError):
    """Vocabulary file contains no terms."""


class VocabularyIOError(ContextError):
    """Vocabulary file could not be read."""


class EmptyCard(ContextError):
    """Feature card requested with no section present."""


class MissingContext(ContextError):
    """A reasoning step needs a card section that is not available."""


# Endpoint --------------------------------------------------------------------


class EndpointError(CxrAgentError):
    """Base class for chat-completion transport errors."""


class EndpointTimeout(EndpointError):
    """Request did not complete within the configured timeout."""


class HttpError(EndpointError):
    """Endpoint answered with a non-retryable HTTP status."""

    def __init__(self, status: int, msg: str = ""):
        self.status = status
        super().__init__(f"HTTP {status}: {msg}" if msg else f"HTTP {status}")


class RetriesExhausted(EndpointError):
    """Every attempt failed with a transient HTTP status."""

    def __init__(self, attempts: int, status: Optional[int] = None):
        self.attempts = attempts
        self.status = status
        super().__init__(
            f"Request failed after {attempts} attempts (last status {status})"
        )


class EndpointUnreachable(EndpointError):
    """Endpoint refused or dropped every connection attempt."""


class MalformedResponse(EndpointError):
    """Endpoint answered 200 with a body that is not a chat completion."""


# Structured output -----------------------------------------------------------


class ParseError(CxrAgentError):
    """Base class for structured-response parsing errors."""


class NoJsonFound(ParseError):
    """Raw text contains no JSON object."""


class MissingField(ParseError):
    """A required response field is absent."""

    def __init__(self, name: str):
        self.name = name
        super().__init__(f"Missing field: {name}")


class NonNumericUncertainty(ParseError):
    """Uncertainty value is not a finite number."""


# Evaluation ------------------------------------------------------------------


class EvaluationError(CxrAgentError):
    """Base class for evaluation harness errors."""


class SingleClass(EvaluationError):
    """Labels contain only one class."""


class DimensionMismatch(EvaluationError):
    """Feature and label dimensions disagree."""


class LabelError(EvaluationError):
    """Labels are not binary."""


class UnknownBlock(EvaluationError):
    """Configuration names a feature block that is not in the matrix."""


class EmptyBatch(EvaluationError):
    """Aggregate requested over zero items."""


class LengthMismatch(EvaluationError):
    """Paired sequences have different lengths."""


class InconsistentTraces(EvaluationError):
    """Traces in one batch have different step structures."""


class TrainingDiverged(EvaluationError):
    """Training loss increased between epochs."""


# Ingest ----------------------------------------------------------------------


class IngestError(CxrAgentError):
    """Base class for dataset loading errors."""


class ManifestMissing(IngestError):
    """Dataset root has no manifest.csv."""


class BrokenReference(IngestError):
    """A manifest or CSV row references a file that does not exist."""

    def __init__(self, path: str):
        self.path = path
        super().__init__(f"Referenced file not found: {path}")


class DecodeError(IngestError):
    """Image file could not be decoded."""


class CsvParseError(IngestError):
    """CSV row is malformed."""

    def __init__(self, line: int, msg: str = ""):
        self.line = line
        super().__init__(f"line {line}: {msg}" if msg else f"line {line}")


class RaggedRows(IngestError):
    """Embedding rows have different lengths."""


class NonFinite(IngestError):
    """Embedding contains NaN or infinity."""


class BadHeader(IngestError):
    """Tensor file header is not `XTEN <K> <h> <w>`."""


class CountMismatch(IngestError):
    """Tensor file value count differs from its header."""


# Mock endpoint ---------------------------------------------------------------


class MockServerError(CxrAgentError):
    """Base class for mock endpoint errors."""


class PortBusy(MockServerError):
    """Requested port is already bound."""


class BadScript(MockServerError):
    """Mock response script is malformed."""


# Batch wrapper ---------------------------------------------------------------


class StudyFailure(CxrAgentError):
    """Any error raised while processing one study, tagged with its id."""

    def __init__(
        self, study_id: str, cause: Exception, step: Optional[int] = None
    ):
        self.study_id = study_id
        self.cause = cause
        self.step = step
        where = f" at step {step}" if step is not None else ""
        super().__init__(
            f"Study {study_id} failed{where}: {type(cause).__name__}: {cause}"
        )
