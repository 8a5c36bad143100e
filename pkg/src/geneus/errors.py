"""Exception types shared across the pipeline."""

from __future__ import annotations

from typing import Any, Sequence


class GeneUSError(Exception):
    """Base class for every error raised by this package."""


# ingest


class IngestError(GeneUSError):
    pass


class EmptyDocument(IngestError):
    pass


class EncodingUnusable(IngestError):
    pass


class NoisyDocument(IngestError):
    """Raised when the noise ratio is beyond what the refine step can repair."""

    def __init__(self, noise_ratio: float):
        super().__init__(f"document rejected: noise ratio {noise_ratio:.3f} exceeds 0.30")
        self.noise_ratio = noise_ratio


class InvalidChunkParams(IngestError, ValueError):
    pass


# prompting


class MissingBinding(GeneUSError, KeyError):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name

    def __str__(self) -> str:
        return f"no binding for placeholder {{{self.name}}}"


class TemplateNotFound(GeneUSError, FileNotFoundError):
    pass


class AbortedAtStep(GeneUSError):
    """A chain step failed. ``step`` is 1-based."""

    def __init__(self, step: int, cause: BaseException, transcript: Any = None):
        super().__init__(f"chain aborted at step {step}: {cause}")
        self.step = step
        self.cause = cause
        self.transcript = transcript


class RefineFailed(GeneUSError):
    def __init__(self, cause: BaseException, transcript: Any = None):
        super().__init__(f"refine step failed: {cause}")
        self.cause = cause
        self.transcript = transcript


class ThoughtFailed(GeneUSError):
    def __init__(self, cause: BaseException, transcript: Any = None, refine_output: Any = None):
        super().__init__(f"thought step failed: {cause}")
        self.cause = cause
        self.transcript = transcript
        self.refine_output = refine_output


class ChainBlockFailed(GeneUSError):
    """A block of a RaT chain failed. ``block`` is 1-based."""

    def __init__(self, block: int, cause: BaseException, traces: Sequence[Any] = ()):
        super().__init__(f"RaT block {block} failed: {cause}")
        self.block = block
        self.cause = cause
        self.traces = list(traces)


# providers


class ProviderError(GeneUSError):
    def __init__(self, detail: str, retryable: bool = False, status: int | None = None):
        super().__init__(detail)
        self.detail = detail
        self.retryable = retryable
        self.status = status


class FixtureMiss(ProviderError):
    def __init__(self, digest: str):
        super().__init__(f"no fixture entry for request digest {digest}", retryable=False)
        self.digest = digest


class ConfigError(GeneUSError, ValueError):
    pass


# output contract


class NoJsonFound(GeneUSError, ValueError):
    pass


class MalformedJson(GeneUSError, ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class SchemaInvalid(GeneUSError):
    def __init__(self, violations: Sequence[Any]):
        self.violations = list(violations)
        preview = "; ".join(str(v) for v in self.violations[:5])
        more = f" (+{len(self.violations) - 5} more)" if len(self.violations) > 5 else ""
        super().__init__(f"output failed validation: {preview}{more}")


# generation


class ParseFailed(GeneUSError):
    pass


class CoverageGap(GeneUSError):
    def __init__(self, missing: Sequence[str]):
        self.missing = list(missing)
        super().__init__("requirements without test cases: " + ", ".join(self.missing))


class PipelineError(GeneUSError):
    """A pipeline stage failed; ``traces`` keeps whatever RaT blocks completed."""

    def __init__(self, stage: str, cause: BaseException, traces: Sequence[Any] = (), transcript: Any = None):
        super().__init__(f"{stage} stage failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.traces = list(traces)
        self.transcript = transcript

    @property
    def provider_failure(self) -> bool:
        return provider_cause(self) is not None


class ArmFailed(GeneUSError):
    """One arm of a RaT-vs-IO comparison failed."""

    def __init__(self, arm: str, cause: BaseException, other: Any = None):
        super().__init__(f"{arm} arm failed: {cause}")
        self.arm = arm
        self.cause = cause
        self.other = other


def provider_cause(exc: BaseException | None) -> ProviderError | None:
    """Walk ``cause`` links and return the underlying provider error, if any."""
    seen = 0
    while exc is not None and seen < 16:
        if isinstance(exc, ProviderError):
            return exc
        exc = getattr(exc, "cause", None) or exc.__cause__
        seen += 1
    return None
