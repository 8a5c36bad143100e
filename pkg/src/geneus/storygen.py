"""Requirements document to requirements, test cases and user stories.

Three RaT blocks run in a fixed order:

1. extract functional and non-functional requirements from the document;
2. generate test cases for those requirements;
3. write user stories with deliverables for the same requirements.

Each thought step asks for JSON. When a reply fails to parse or validate the
model gets one repair re-prompt listing the problems; a second failure is
raised.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, replace
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

from .errors import (
    CoverageGap,
    MalformedJson,
    NoJsonFound,
    NoisyDocument,
    ParseFailed,
    PipelineError,
    SchemaInvalid,
)
from .ingest import ExtractedText, NoiseDecision, SourceDocument, chunk, extract_text, noise_report
from .promptkit import (
    REFINE_TEMPLATE_ID,
    Completion,
    GenerationParams,
    PromptTemplate,
    Provider,
    RaTTrace,
    Transcript,
    load_template,
    render,
    run_io,
    run_rat,
)
from .schema import (
    DELIVERABLES_KEY,
    STORY_KEY,
    GenerationResult,
    Requirement,
    RequirementSet,
    TestCase,
    UserStory,
    Violation,
    parse_llm_json,
    split_story_sentence,
    story_from_value,
    test_case_from_value,
    validate_story,
    validate_test_case,
)

__all__ = [
    "GenerationResult",
    "PipelineConfig",
    "Requirement",
    "RequirementSet",
    "Templates",
    "extract_requirements",
    "generate_stories",
    "generate_test_cases",
    "run_pipeline",
]

STAGES = ("ingest", "requirements", "test_cases", "stories")


@dataclass(frozen=True)
class Templates:
    refine: PromptTemplate
    requirements: PromptTemplate
    test_cases: PromptTemplate
    stories: PromptTemplate
    repair: PromptTemplate

    @classmethod
    def load(cls, templates_dir: str | Path | None = None) -> "Templates":
        return cls(
            refine=load_template(REFINE_TEMPLATE_ID, templates_dir),
            requirements=load_template("extract_requirements.v1", templates_dir),
            test_cases=load_template("generate_test_cases.v1", templates_dir),
            stories=load_template("generate_stories.v1", templates_dir),
            repair=load_template("repair.v1", templates_dir),
        )

    def ids(self) -> dict[str, str]:
        return {
            "refine": self.refine.id,
            "requirements": self.requirements.id,
            "test_cases": self.test_cases.id,
            "stories": self.stories.id,
            "repair": self.repair.id,
        }


@dataclass(frozen=True)
class PipelineConfig:
    params: GenerationParams = GenerationParams()
    templates_dir: Path | None = None
    # documents longer than this are split and step 1 runs once per chunk
    chunk_max_chars: int | None = None
    chunk_overlap: int = 0
    repair: bool = True
    clock: Callable[[], datetime] | None = None

    def with_seed(self, seed: int | None) -> "PipelineConfig":
        return replace(self, params=replace(self.params, seed=seed))

    def templates(self) -> Templates:
        return Templates.load(self.templates_dir)

    def transcript(self) -> Transcript:
        return Transcript(clock=self.clock) if self.clock else Transcript()


DEFAULT_CONFIG = PipelineConfig()


# reply normalization

_WS = re.compile(r"\s+")
_ITEM = re.compile(r"^\s*(?:\d+\s*[.):]|[-*•])\s+(?P<text>\S.*)$")
_REQ_ID = re.compile(r"\bR[1-9][0-9]*\b")


def _clean(value: Any) -> Any:
    if isinstance(value, str):
        return _WS.sub(" ", value).strip()
    if isinstance(value, list):
        return [_clean(v) for v in value]
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    return value


def _norm_key(key: str) -> str:
    return re.sub(r"[^a-z]", "", key.lower())


def _pick(obj: Mapping[str, Any], *names: str) -> Any:
    wanted = {_norm_key(n) for n in names}
    for key, value in obj.items():
        if _norm_key(key) in wanted:
            return value
    return None


def _unwrap_list(value: Any, *names: str) -> Any:
    if isinstance(value, dict):
        inner = _pick(value, *names)
        if isinstance(inner, list):
            return inner
    return value


def _item_text(item: Any) -> str:
    if isinstance(item, str):
        return item
    if isinstance(item, dict):
        text = _pick(item, "text", "requirement", "description", "statement")
        return text if isinstance(text, str) else ""
    return ""


def parse_requirements(raw: str) -> list[tuple[str, str]]:
    """``(text, kind)`` pairs from a step-1 reply, JSON or numbered lists."""
    pairs: list[tuple[str, str]] = []
    try:
        value = _clean(parse_llm_json(raw))
    except (NoJsonFound, MalformedJson):
        value = None
    if isinstance(value, dict):
        functional = _pick(value, "functional", "functional_requirements")
        nonfunctional = _pick(value, "nonfunctional", "non_functional", "nonfunctional_requirements")
        if functional is None and nonfunctional is None:
            value = _unwrap_list(value, "requirements")
        else:
            for kind, items in (("functional", functional), ("nonfunctional", nonfunctional)):
                for item in items if isinstance(items, list) else []:
                    text = _item_text(item)
                    if text:
                        pairs.append((text, kind))
    if isinstance(value, list):
        for item in value:
            text = _item_text(item)
            kind = "functional"
            if isinstance(item, dict):
                declared = _norm_key(str(_pick(item, "kind", "type", "category") or ""))
                kind = "nonfunctional" if declared.startswith("non") else "functional"
            if text:
                pairs.append((text, kind))
    if value is None:
        kind = "functional"
        for line in raw.splitlines():
            m = _ITEM.match(line)
            if m:
                pairs.append((_WS.sub(" ", m.group("text")).strip(), kind))
                continue
            heading = _norm_key(line)
            if "functional" in heading and len(line) < 80:
                kind = "nonfunctional" if "nonfunctional" in heading else "functional"
    if not pairs:
        raise ParseFailed("reply contained no requirement statements")
    return pairs


def build_requirement_set(pairs: Iterable[tuple[str, str]], source_text: str) -> RequirementSet:
    seen: set[str] = set()
    requirements: list[Requirement] = []
    for text, kind in pairs:
        key = text.lower()
        if key in seen:
            continue
        seen.add(key)
        requirements.append(Requirement(f"R{len(requirements) + 1}", text, kind))
    return RequirementSet(tuple(requirements), source_digest(source_text))


def source_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


_KIND_ALIASES = {
    "positive": "functional",
    "happypath": "functional",
    "functional": "functional",
    "negative": "negative",
    "error": "negative",
    "boundary": "boundary",
    "edge": "boundary",
    "edgecase": "boundary",
}


def _normalize_test_case(item: Any, index: int) -> Any:
    if not isinstance(item, dict):
        return item
    ref = _pick(item, "story_ref", "requirement_ref", "requirement_id", "requirement", "ref")
    if isinstance(ref, list) and ref:
        ref = ref[0]
    if isinstance(ref, str) and not re.fullmatch(r"[RS][1-9][0-9]*", ref):
        m = _REQ_ID.search(ref)
        ref = m.group(0) if m else ref
    steps = _pick(item, "steps", "test_steps")
    pre = _pick(item, "preconditions", "precondition")
    out: dict[str, Any] = {
        "id": _pick(item, "id", "test_id") or f"T{index}",
        "story_ref": ref,
        "title": _pick(item, "title", "name", "summary") or "",
        "preconditions": [pre] if isinstance(pre, str) else (pre if pre is not None else []),
        "steps": [steps] if isinstance(steps, str) else steps,
        "expected": _pick(item, "expected", "expected_result", "expected_outcome"),
        "kind": _KIND_ALIASES.get(_norm_key(str(_pick(item, "kind", "type") or "functional")), _pick(item, "kind", "type")),
    }
    return {k: v for k, v in out.items() if v is not None}


def parse_test_cases(raw: str, requirements: RequirementSet) -> list[TestCase]:
    try:
        value = _clean(parse_llm_json(raw))
    except (NoJsonFound, MalformedJson) as exc:
        raise ParseFailed(f"test cases are not JSON: {exc}") from exc
    value = _unwrap_list(value, "test_cases", "tests", "testcases")
    if not isinstance(value, list) or not value:
        raise ParseFailed("expected a non-empty JSON array of test cases")
    ids = requirements.ids
    violations: list[Violation] = []
    cases: list[TestCase] = []
    for i, item in enumerate(value):
        normalized = _normalize_test_case(item, i + 1)
        found = validate_test_case(normalized, ids, path=f"$.test_cases[{i}]")
        if found:
            violations.extend(found)
        else:
            cases.append(test_case_from_value(normalized))
    if violations:
        raise SchemaInvalid(violations)
    covered = {c.story_ref for c in cases}
    missing = [rid for rid in ids if rid not in covered]
    if missing:
        raise CoverageGap(missing)
    return cases


def _normalize_story(item: Any) -> Any:
    if not isinstance(item, dict):
        return item
    story = _pick(item, STORY_KEY, "story", "user_story", "userstory", "summary")
    deliverables = _pick(item, DELIVERABLES_KEY, "deliverables")
    refs = _pick(item, "requirement_refs", "requirement_ids", "requirements", "refs")
    if isinstance(refs, str):
        refs = _REQ_ID.findall(refs)
    out: dict[str, Any] = {}
    if story is not None:
        out[STORY_KEY] = story
    who, what, why = split_story_sentence(story) if isinstance(story, str) else ("", "", "")
    for key, parsed in (("who", who), ("what", what), ("why", why)):
        given = item.get(key)
        out[key] = given if isinstance(given, str) and given else parsed
    out["requirement_refs"] = refs if refs is not None else []
    if deliverables is not None:
        out[DELIVERABLES_KEY] = deliverables
    return out


def parse_stories(raw: str, requirements: RequirementSet) -> list[UserStory]:
    try:
        value = _clean(parse_llm_json(raw))
    except (NoJsonFound, MalformedJson) as exc:
        raise ParseFailed(f"user stories are not JSON: {exc}") from exc
    if isinstance(value, dict) and _pick(value, STORY_KEY, "story") is not None:
        value = [value]
    value = _unwrap_list(value, "stories", "user_stories", "userstories")
    if not isinstance(value, list) or not value:
        raise ParseFailed("expected a non-empty JSON array of user stories")
    ids = requirements.ids
    violations: list[Violation] = []
    stories: list[UserStory] = []
    for i, item in enumerate(value):
        normalized = _normalize_story(item)
        path = f"$.stories[{i}]"
        found = validate_story(normalized, ids, path=path)
        if isinstance(normalized, dict) and isinstance(normalized.get("requirement_refs"), list):
            if not normalized["requirement_refs"]:
                found.append(Violation(f"{path}.requirement_refs", "non-empty", "story must reference a requirement id"))
        if found:
            violations.extend(found)
        else:
            stories.append(story_from_value(normalized))
    if violations:
        raise SchemaInvalid(violations)
    return stories


# stages


def _describe(exc: Exception) -> str:
    if isinstance(exc, SchemaInvalid):
        return "\n".join(f"- {v}" for v in exc.violations)
    if isinstance(exc, CoverageGap):
        return "- no test case covers: " + ", ".join(exc.missing)
    return f"- {exc}"


def _parse_with_repair(
    provider: Provider,
    completion: Completion,
    task: str,
    parse: Callable[[str], Any],
    config: PipelineConfig,
    templates: Templates,
    transcript: Transcript,
    label: str,
) -> Any:
    try:
        return parse(completion.text)
    except (ParseFailed, SchemaInvalid, CoverageGap) as exc:
        if not config.repair:
            raise
        problems = _describe(exc)
        if completion.truncated:
            problems += "\n- the response was cut off before it finished"
        instruction = render(templates.repair, {"task": task, "problems": problems})
        repaired, _ = run_io(
            provider, instruction, completion.text or "(empty response)", config.params, transcript, f"{label}.repair"
        )
        return parse(repaired.text)


def _as_text(text: ExtractedText | str) -> ExtractedText:
    return text if isinstance(text, ExtractedText) else ExtractedText(text)


def extract_requirements(
    text: ExtractedText | str,
    provider: Provider,
    config: PipelineConfig = DEFAULT_CONFIG,
    transcript: Transcript | None = None,
    mode: str = "rat",
    templates: Templates | None = None,
) -> tuple[RequirementSet, RaTTrace | None]:
    """Step 1. ``mode="io"`` swaps the RaT block for a single IO call (trace is then None)."""
    extracted = _as_text(text)
    if noise_report(extracted) is NoiseDecision.REJECT:
        raise NoisyDocument(extracted.noise_ratio)
    templates = templates or config.templates()
    transcript = transcript if transcript is not None else config.transcript()
    instruction = templates.requirements.instruction
    if mode == "rat":
        completion, trace = run_rat(
            provider, extracted.text, instruction, config.params, transcript, templates.refine.instruction, "requirements"
        )
    elif mode == "io":
        completion, _ = run_io(provider, instruction, extracted.text, config.params, transcript, "requirements.io")
        trace = None
    else:
        raise ValueError(f"mode must be 'rat' or 'io', got {mode!r}")
    pairs = _parse_with_repair(
        provider, completion, instruction, parse_requirements, config, templates, transcript, "requirements"
    )
    return build_requirement_set(pairs, extracted.text), trace


def generate_test_cases(
    requirements: RequirementSet,
    provider: Provider,
    config: PipelineConfig = DEFAULT_CONFIG,
    transcript: Transcript | None = None,
    templates: Templates | None = None,
) -> tuple[list[TestCase], RaTTrace]:
    """Step 2: at least one test case per requirement id."""
    if not len(requirements):
        raise ValueError("no requirements to generate test cases for")
    templates = templates or config.templates()
    transcript = transcript if transcript is not None else config.transcript()
    instruction = templates.test_cases.instruction
    completion, trace = run_rat(
        provider, requirements.as_prompt(), instruction, config.params, transcript, templates.refine.instruction, "test_cases"
    )
    cases = _parse_with_repair(
        provider,
        completion,
        instruction,
        lambda raw: parse_test_cases(raw, requirements),
        config,
        templates,
        transcript,
        "test_cases",
    )
    return cases, trace


def generate_stories(
    requirements: RequirementSet,
    provider: Provider,
    config: PipelineConfig = DEFAULT_CONFIG,
    transcript: Transcript | None = None,
    templates: Templates | None = None,
) -> tuple[list[UserStory], RaTTrace]:
    """Step 3: user stories with deliverables."""
    if not len(requirements):
        raise ValueError("no requirements to write stories for")
    templates = templates or config.templates()
    transcript = transcript if transcript is not None else config.transcript()
    instruction = templates.stories.instruction
    completion, trace = run_rat(
        provider, requirements.as_prompt(), instruction, config.params, transcript, templates.refine.instruction, "stories"
    )
    stories = _parse_with_repair(
        provider,
        completion,
        instruction,
        lambda raw: parse_stories(raw, requirements),
        config,
        templates,
        transcript,
        "stories",
    )
    return stories, trace


def _extract_chunked(
    extracted: ExtractedText,
    provider: Provider,
    config: PipelineConfig,
    transcript: Transcript,
    templates: Templates,
    traces: list[RaTTrace],
) -> RequirementSet:
    pairs: list[tuple[str, str]] = []
    for piece in chunk(extracted, config.chunk_max_chars or len(extracted.text), config.chunk_overlap):
        part, trace = extract_requirements(
            ExtractedText(piece.text, extracted.noise_ratio), provider, config, transcript, templates=templates
        )
        traces.append(trace)  # type: ignore[arg-type]
        pairs.extend((r.text, r.kind) for r in part)
    return build_requirement_set(pairs, extracted.text)


def run_pipeline(
    doc: SourceDocument | ExtractedText | str,
    provider: Provider,
    config: PipelineConfig = DEFAULT_CONFIG,
) -> GenerationResult:
    """Extract text, then requirements, test cases and stories, in that order."""
    transcript = config.transcript()
    traces: list[RaTTrace] = []
    stage = "ingest"
    try:
        if isinstance(doc, SourceDocument):
            extracted = extract_text(doc)
        else:
            extracted = _as_text(doc)
        if noise_report(extracted) is NoiseDecision.REJECT:
            raise NoisyDocument(extracted.noise_ratio)
        templates = config.templates()

        stage = "requirements"
        if config.chunk_max_chars and len(extracted.text) > config.chunk_max_chars:
            requirements = _extract_chunked(extracted, provider, config, transcript, templates, traces)
        else:
            requirements, trace = extract_requirements(extracted, provider, config, transcript, templates=templates)
            traces.append(trace)  # type: ignore[arg-type]

        stage = "test_cases"
        test_cases, trace = generate_test_cases(requirements, provider, config, transcript, templates)
        traces.append(trace)

        stage = "stories"
        stories, trace = generate_stories(requirements, provider, config, transcript, templates)
        traces.append(trace)
    except Exception as exc:
        raise PipelineError(stage, exc, traces, transcript) from exc

    metadata: dict[str, Any] = {
        "model_id": config.params.model_id,
        "temperature": config.params.temperature,
        "seed": config.params.seed,
        "templates": templates.ids(),
        "noise_ratio": extracted.noise_ratio,
        "source_digest": requirements.source_digest,
        "started_at": transcript.started_at.isoformat() if transcript.started_at else None,
        "finished_at": transcript.finished_at.isoformat() if transcript.finished_at else None,
    }
    return GenerationResult(
        requirements=requirements,
        stories=tuple(stories),
        test_cases=tuple(test_cases),
        metadata=metadata,
        traces=tuple(traces),
        transcript=transcript,
    )


TIMESTAMP_KEYS = ("started_at", "finished_at")


def strip_timestamps(envelope: Mapping[str, Any]) -> dict[str, Any]:
    """Copy of a result envelope without run timestamps, for comparing runs."""
    out = dict(envelope)
    out["metadata"] = {k: v for k, v in dict(envelope.get("metadata", {})).items() if k not in TIMESTAMP_KEYS}
    return out
