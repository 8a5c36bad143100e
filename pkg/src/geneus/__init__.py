"""GeneUS: requirements documents to user stories and test cases.

The pipeline runs three Refine-and-Thought (RaT) prompting blocks against a
pluggable chat model and returns a schema-validated JSON envelope.
"""

from .ingest import ExtractedText, SourceDocument, chunk, extract_text, noise_report
from .promptkit import (
    Completion,
    GenerationParams,
    ModelRequest,
    RaTTrace,
    Transcript,
    compose_rat_chain,
    render,
    run_cot,
    run_io,
    run_rat,
)
from .provider import ProviderConfig, build_provider, normalize_digest
from .schema import GenerationResult, UserStory, parse_llm_json, serialize, validate_result
from .storygen import PipelineConfig, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "Completion",
    "ExtractedText",
    "GenerationParams",
    "GenerationResult",
    "ModelRequest",
    "PipelineConfig",
    "ProviderConfig",
    "RaTTrace",
    "SourceDocument",
    "Transcript",
    "UserStory",
    "build_provider",
    "chunk",
    "compose_rat_chain",
    "extract_text",
    "noise_report",
    "normalize_digest",
    "parse_llm_json",
    "render",
    "run_cot",
    "run_io",
    "run_pipeline",
    "run_rat",
    "serialize",
    "validate_result",
]
