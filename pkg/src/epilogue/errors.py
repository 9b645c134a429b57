"""Exception hierarchy shared by every module.

Each error carries a stable ``code`` string; the CLI maps codes to exit
codes, the collection server puts them on the wire.
"""

from __future__ import annotations


class EpilogueError(Exception):
    """Base class; ``code`` is a stable machine-readable identifier."""

    code = "ERROR"

    def __init__(self, message: str = "", **context):
        self.context = context
        if context:
            detail = ", ".join(f"{k}={v!r}" for k, v in sorted(context.items()))
            message = f"{message} ({detail})" if message else detail
        super().__init__(message)


class InvalidArgumentError(EpilogueError):
    code = "INVALID_ARGUMENT"


# -- core model ---------------------------------------------------------

class InvalidSchemaError(EpilogueError):
    code = "INVALID_SCHEMA"


class UnresolvedVariableExtentError(EpilogueError):
    code = "UNRESOLVED_VARIABLE_EXTENT"


# -- record store -------------------------------------------------------

class IOFailureError(EpilogueError):
    code = "IO_FAILURE"


class SchemaMismatchError(EpilogueError):
    code = "SCHEMA_MISMATCH"


class FlagSequenceError(EpilogueError):
    code = "FLAG_SEQUENCE_VIOLATION"


class DanglingEpisodeError(EpilogueError):
    code = "DANGLING_EPISODE"


class WriterClosedError(EpilogueError):
    code = "WRITER_CLOSED"


class BadMagicError(EpilogueError):
    code = "BAD_MAGIC"


class UnsupportedVersionError(EpilogueError):
    code = "UNSUPPORTED_VERSION"


class ChunkCorruptError(EpilogueError):
    code = "CHUNK_CORRUPT"

    def __init__(self, message: str = "", offset: int | None = None, **context):
        self.offset = offset
        super().__init__(message, offset=offset, **context)


class MissingFooterError(EpilogueError):
    code = "MISSING_FOOTER"


class EpisodeOutOfRangeError(EpilogueError):
    code = "EPISODE_OUT_OF_RANGE"


class StepOutOfRangeError(EpilogueError):
    code = "STEP_OUT_OF_RANGE"


# -- transforms ---------------------------------------------------------

class InvalidEpisodeError(EpilogueError):
    code = "INVALID_EPISODE"


class NonVectorObservationError(EpilogueError):
    code = "NON_VECTOR_OBSERVATION"


class UnsupportedDtypeError(EpilogueError):
    code = "UNSUPPORTED_DTYPE"


class UnknownFieldError(EpilogueError):
    code = "UNKNOWN_FIELD"


class TransformApplyError(EpilogueError):
    """Wraps an error raised by a user callback, with stream coordinates."""

    code = "TRANSFORM_APPLY"

    def __init__(self, message: str, episode_index: int, step_index: int | None = None):
        self.episode_index = episode_index
        self.step_index = step_index
        super().__init__(message, episode=episode_index, step=step_index)


# -- catalog ------------------------------------------------------------

class DuplicateVersionError(EpilogueError):
    code = "DUPLICATE_VERSION"


class ChecksumMismatchError(EpilogueError):
    code = "CHECKSUM_MISMATCH"


class SchemaDigestMismatchError(EpilogueError):
    code = "SCHEMA_DIGEST_MISMATCH"


class NetworkFailureError(EpilogueError):
    code = "NETWORK_FAILURE"


class UnknownDatasetError(EpilogueError):
    code = "UNKNOWN_DATASET"


class UnknownSplitError(EpilogueError):
    code = "UNKNOWN_SPLIT"


class BadSplitExprError(EpilogueError):
    code = "BAD_SPLIT_EXPR"


# -- pipeline / cli -----------------------------------------------------

class PipelineKindMismatchError(EpilogueError):
    code = "PIPELINE_KIND_MISMATCH"

    def __init__(self, message: str, stage_index: int, **context):
        self.stage_index = stage_index
        super().__init__(message, stage=stage_index, **context)


# -- collect server -----------------------------------------------------

class IllegalEventError(EpilogueError):
    code = "ILLEGAL_EVENT"

    def __init__(self, phase: str, event: str):
        self.phase = phase
        self.event = event
        super().__init__(f"event {event!r} not legal in phase {phase!r}")


class UnknownEpisodeError(EpilogueError):
    code = "UNKNOWN_EPISODE"


class IndexOutOfRangeError(EpilogueError):
    code = "INDEX_OUT_OF_RANGE"


class NoMatchingEpisodesError(EpilogueError):
    code = "NO_MATCHING_EPISODES"
