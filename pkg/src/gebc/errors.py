"""Error hierarchy shared by the library, the HTTP service, and the CLI.

Every error class carries a distinct CLI exit code and an HTTP status so the
service and the thin client agree on how failures surface.
"""

from __future__ import annotations


class GebcError(Exception):
    """Base class for all pipeline errors."""

    exit_code = 1
    http_status = 500


class MalformedAnnotation(GebcError):
    """Annotation file is syntactically invalid or structurally wrong."""

    exit_code = 10
    http_status = 400


class InvariantViolation(GebcError):
    """A record violates a domain invariant (e.g. time box outside duration)."""

    exit_code = 11
    http_status = 400


class CorruptCache(GebcError):
    """Feature cache file has a bad magic, version, or payload length."""

    exit_code = 12
    http_status = 500


class IoFailure(GebcError):
    """Filesystem operation failed."""

    exit_code = 13
    http_status = 500


class CacheMiss(GebcError):
    """Required feature cache file is absent in cache-only mode."""

    exit_code = 14
    http_status = 404


class ShapeMismatch(GebcError):
    """Tensor shape disagrees with a declared contract."""

    exit_code = 15
    http_status = 400


class InvalidStride(GebcError):
    """Frame sampling stride below 1."""

    exit_code = 16
    http_status = 400


class InvalidBox(GebcError):
    """Time box with start > end or outside the video duration."""

    exit_code = 17
    http_status = 400


class LogitDomainError(GebcError):
    """Inverse-sigmoid input outside the clamped domain."""

    exit_code = 18
    http_status = 400


class PositionOverflow(GebcError):
    """Sequence longer than the learned positional table."""

    exit_code = 19
    http_status = 400


class TokenizationFailure(GebcError):
    """Text cannot be tokenized by the configured LM tokenizer."""

    exit_code = 20
    http_status = 400


class EmptyTarget(GebcError):
    """Training assembly has no target positions to score."""

    exit_code = 21
    http_status = 400


class NonFiniteLoss(GebcError):
    """Training loss became NaN/Inf; carries step diagnostics in the message."""

    exit_code = 22
    http_status = 500


class InvalidSchedule(GebcError):
    """Learning-rate schedule parameters are inconsistent."""

    exit_code = 23
    http_status = 400


class CorruptCheckpoint(GebcError):
    """Checkpoint container is truncated or has a bad magic/version."""

    exit_code = 24
    http_status = 500


class ConfigMismatch(GebcError):
    """Checkpoint config hash disagrees with the live config."""

    exit_code = 25
    http_status = 409


class EmptyCorpus(GebcError):
    """Metric invoked on an empty candidate/reference corpus."""

    exit_code = 26
    http_status = 400


class MissingPrediction(GebcError):
    """Evaluation input lacks predictions for annotated boundaries."""

    exit_code = 27
    http_status = 400


class ExtractorUnavailable(GebcError):
    """Configured extractor name is not registered."""

    exit_code = 28
    http_status = 400


class ConfigError(GebcError):
    """Run configuration failed schema validation."""

    exit_code = 29
    http_status = 422


#: name -> class, used by the CLI to map service error payloads to exit codes.
ERROR_CLASSES: dict[str, type[GebcError]] = {
    cls.__name__: cls
    for cls in [
        GebcError,
        MalformedAnnotation,
        InvariantViolation,
        CorruptCache,
        IoFailure,
        CacheMiss,
        ShapeMismatch,
        InvalidStride,
        InvalidBox,
        LogitDomainError,
        PositionOverflow,
        TokenizationFailure,
        EmptyTarget,
        NonFiniteLoss,
        InvalidSchedule,
        CorruptCheckpoint,
        ConfigMismatch,
        EmptyCorpus,
        MissingPrediction,
        ExtractorUnavailable,
        ConfigError,
    ]
}


def exit_code_for(error_name: str) -> int:
    cls = ERROR_CLASSES.get(error_name)
    return cls.exit_code if cls is not None else 1
