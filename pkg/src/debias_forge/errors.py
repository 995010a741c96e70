"""Structured errors shared across the pipeline."""

from __future__ import annotations


class PipelineError(Exception):
    """Base class for all pipeline failures."""


class ManifestError(PipelineError):
    """Malformed manifest input: parse failure or invariant violation.

    Carries enough context (line number, record id, field) for a user to
    locate the offending input without a stack trace.
    """

    def __init__(
        self,
        message: str,
        *,
        line: int | None = None,
        record_id: str | None = None,
        field: str | None = None,
    ) -> None:
        self.line = line
        self.record_id = record_id
        self.field = field
        parts = [message]
        if line is not None:
            parts.append(f"(line {line})")
        if record_id is not None:
            parts.append(f"[record_id={record_id}]")
        if field is not None:
            parts.append(f"[field={field}]")
        super().__init__(" ".join(parts))


class ProviderError(PipelineError):
    """Transport or inference failure from a candidate/embedding/detection provider."""

    def __init__(self, message: str, *, code: str | None = None) -> None:
        self.code = code
        super().__init__(f"[{code}] {message}" if code else message)


class FixtureMissError(ProviderError):
    """A fixture-mode request has no matching pre-rendered asset."""


class PartialFailure(PipelineError):
    """A batch stage finished with some per-record failures."""

    def __init__(self, message: str, failures: dict[str, str]) -> None:
        self.failures = dict(failures)
        super().__init__(message)
