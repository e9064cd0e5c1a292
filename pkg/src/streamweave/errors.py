"""Exception types shared across the pipeline."""


class PipelineError(Exception):
    """Base class for every error this package raises on purpose."""


class ZeroVectorError(PipelineError):
    """A vector with (near-)zero norm was used where direction matters."""


class DimensionMismatchError(PipelineError):
    """Vectors of different dimensions were combined."""


class EmptyInputError(PipelineError):
    """An operation that needs at least one element received none."""


class NonFiniteInputError(PipelineError):
    """NaN or infinity in numeric input."""


class EmptyRelevantSetError(PipelineError):
    """The ground-truth relevant clip set is empty."""


class IndexOutOfRangeError(PipelineError):
    """A clip index points outside the available clip list."""


class NonMonotonicTimestampError(PipelineError):
    """Frame timestamps must strictly increase within a stream."""


class ParseError(PipelineError):
    """Input file is not valid JSON."""


class SchemaError(PipelineError):
    """Scenario/config JSON is missing a field or has the wrong shape."""


class ValidationError(PipelineError):
    """Well-formed input violates a semantic invariant."""


class InvalidSpecError(PipelineError):
    """A synthetic-stream generator spec is unusable."""


class NonConsecutiveClipError(PipelineError):
    """Clips must be ingested in index order without gaps."""


class QuestionAlreadyActiveError(PipelineError):
    """Only one question may be active at a time."""


class NoActiveQuestionError(PipelineError):
    """Operation requires an active question."""


class NonMonotonicAnswerError(PipelineError):
    """Answer positions must increase and follow the question."""


class MalformedSequenceError(PipelineError):
    """The interleaved decision sequence is not in a legal stage."""


class EmptyDatasetError(PipelineError):
    """A trainer was handed zero samples."""


class EmptyClipSetError(PipelineError):
    """Retrieval scoring needs at least one clip indicator."""


class InvalidPolicyError(PipelineError):
    """Grounding selection policy has nonsensical parameters."""


class BackendUnavailableError(PipelineError):
    """External scorer/generator endpoint unreachable or timed out."""


class MalformedResponseError(PipelineError):
    """External endpoint answered with an unusable payload."""


class IncompleteTimelineError(PipelineError):
    """Metrics require a finished, internally consistent timeline."""


class SinkClosedError(PipelineError):
    """The event consumer went away mid-stream."""


class InvalidConfigError(PipelineError):
    """Run configuration failed validation."""
