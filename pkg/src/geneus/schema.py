"""Output contract: requirements, user stories with deliverables, test cases.

A result is exchanged as one JSON envelope::

    {"requirements": [...], "stories": [...], "test_cases": [...], "metadata": {...}}

Story objects use the ``"User Story"`` / ``"Deliverables"`` keys that the
tool has always emitted, plus optional ``who``/``what``/``why`` and
``requirement_refs``. Stories are addressable as ``S1``, ``S2``, ... by
position.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Iterable, Mapping

from .errors import MalformedJson, NoJsonFound, SchemaInvalid

STORY_KEY = "User Story"
DELIVERABLES_KEY = "Deliverables"
DEFAULT_DELIVERABLES = (
    "architecture_design",
    "database_schema_design",
    "unit_tests",
    "user_training_documentation",
    "production_support_plan",
)
REQUIREMENT_KINDS = ("functional", "nonfunctional")
TEST_KINDS = ("functional", "negative", "boundary")

DELIVERABLE_KEY_RE = re.compile(r"^[a-z][a-z0-9_]*$")
REQUIREMENT_ID_RE = re.compile(r"^R[1-9][0-9]*$")
STORY_ID_RE = re.compile(r"^S([1-9][0-9]*)$")


# data types


@dataclass(frozen=True)
class Requirement:
    id: str
    text: str
    kind: str = "functional"

    def to_dict(self) -> dict[str, str]:
        return {"id": self.id, "text": self.text, "kind": self.kind}


@dataclass(frozen=True)
class RequirementSet:
    requirements: tuple[Requirement, ...]
    source_digest: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "requirements", tuple(self.requirements))

    def __len__(self) -> int:
        return len(self.requirements)

    def __iter__(self):
        return iter(self.requirements)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.requirements]

    @property
    def texts(self) -> list[str]:
        return [r.text for r in self.requirements]

    def as_prompt(self) -> str:
        """The labelled list fed to the test-case and story blocks."""
        return "\n".join(f"{r.id} ({r.kind}): {r.text}" for r in self.requirements)


@dataclass(frozen=True)
class Deliverable:
    key: str
    definition_of_done: str
    criteria: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "criteria", tuple(self.criteria))

    def to_dict(self) -> dict[str, Any]:
        return {"definition_of_done": self.definition_of_done, "criteria": list(self.criteria)}


@dataclass(frozen=True)
class DeliverableSet:
    items: tuple[Deliverable, ...] = ()

    def __post_init__(self) -> None:
        items = tuple(self.items)
        keys = [d.key for d in items]
        if len(set(keys)) != len(keys):
            raise ValueError(f"duplicate deliverable keys: {keys}")
        object.__setattr__(self, "items", items)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __getitem__(self, key: str) -> Deliverable:
        for d in self.items:
            if d.key == key:
                return d
        raise KeyError(key)

    def keys(self) -> list[str]:
        return [d.key for d in self.items]

    def missing_defaults(self) -> list[str]:
        present = set(self.keys())
        return [k for k in DEFAULT_DELIVERABLES if k not in present]

    def to_dict(self) -> dict[str, Any]:
        return {d.key: d.to_dict() for d in self.items}


@dataclass(frozen=True)
class UserStory:
    story: str
    deliverables: DeliverableSet = field(default_factory=DeliverableSet)
    who: str = ""
    what: str = ""
    why: str = ""
    requirement_refs: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "requirement_refs", tuple(self.requirement_refs))

    def to_dict(self) -> dict[str, Any]:
        return {
            STORY_KEY: self.story,
            "who": self.who,
            "what": self.what,
            "why": self.why,
            "requirement_refs": list(self.requirement_refs),
            DELIVERABLES_KEY: self.deliverables.to_dict(),
        }


@dataclass(frozen=True)
class TestCase:
    __test__ = False  # not a pytest class

    id: str
    story_ref: str
    title: str
    steps: tuple[str, ...]
    expected: str
    preconditions: tuple[str, ...] = ()
    kind: str = "functional"

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(self.steps))
        object.__setattr__(self, "preconditions", tuple(self.preconditions))

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "story_ref": self.story_ref,
            "title": self.title,
            "preconditions": list(self.preconditions),
            "steps": list(self.steps),
            "expected": self.expected,
            "kind": self.kind,
        }


@dataclass(frozen=True)
class GenerationResult:
    requirements: RequirementSet
    stories: tuple[UserStory, ...] = ()
    test_cases: tuple[TestCase, ...] = ()
    metadata: Mapping[str, Any] = field(default_factory=dict)
    traces: tuple[Any, ...] = field(default=(), compare=False)
    transcript: Any = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "stories", tuple(self.stories))
        object.__setattr__(self, "test_cases", tuple(self.test_cases))
        object.__setattr__(self, "traces", tuple(self.traces))

    def to_envelope(self) -> dict[str, Any]:
        metadata = dict(self.metadata)
        if self.requirements.source_digest:
            metadata.setdefault("source_digest", self.requirements.source_digest)
        return {
            "requirements": [r.to_dict() for r in self.requirements],
            "stories": [s.to_dict() for s in self.stories],
            "test_cases": [t.to_dict() for t in self.test_cases],
            "metadata": metadata,
        }


@dataclass(frozen=True)
class Violation:
    path: str
    rule: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: [{self.rule}] {self.message}"

    def to_dict(self) -> dict[str, str]:
        return {"path": self.path, "rule": self.rule, "message": self.message}


# tolerant JSON extraction

_FENCE_RE = re.compile(r"```[A-Za-z0-9_-]*[ \t]*\n(.*?)```", re.DOTALL)


def _balanced_end(text: str, start: int) -> int | None:
    """Index one past the bracket closing the value opened at ``start``."""
    stack: list[str] = []
    in_string = False
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch in "[{":
            stack.append("]" if ch == "[" else "}")
        elif ch in "]}":
            if not stack or stack.pop() != ch:
                return None
            if not stack:
                return i + 1
    return None


def _drop_trailing_commas(text: str) -> str:
    out: list[str] = []
    in_string = False
    escaped = False
    i = 0
    while i < len(text):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            out.append(ch)
        elif ch == '"':
            in_string = True
            out.append(ch)
        elif ch == ",":
            j = i + 1
            while j < len(text) and text[j] in " \t\r\n":
                j += 1
            if j >= len(text) or text[j] not in "]}":
                out.append(ch)
        else:
            out.append(ch)
        i += 1
    return "".join(out)


def _loads(candidate: str) -> Any:
    # strict=False admits raw newlines inside strings, common in wrapped model output
    return json.loads(candidate, strict=False)


def parse_llm_json(raw: str) -> Any:
    """Pull the outermost JSON value out of a model reply.

    Handles code fences, surrounding prose, raw newlines inside strings and
    trailing commas.
    """
    fence = _FENCE_RE.search(raw)
    body = fence.group(1) if fence else raw
    offset = fence.start(1) if fence else 0
    starts = [i for i, ch in enumerate(body) if ch in "[{"]
    if not starts:
        raise NoJsonFound("no JSON object or array in model output")
    first_error: MalformedJson | None = None
    for start in starts:
        end = _balanced_end(body, start)
        if end is None:
            err = MalformedJson("unbalanced JSON value", offset + len(body))
        else:
            candidate = body[start:end]
            try:
                return _loads(candidate)
            except json.JSONDecodeError:
                try:
                    return _loads(_drop_trailing_commas(candidate))
                except json.JSONDecodeError as exc:
                    err = MalformedJson(exc.msg, offset + start + exc.pos)
        if first_error is None:
            first_error = err
    assert first_error is not None
    raise first_error


# validation


def _type_name(value: Any) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "boolean"
    if isinstance(value, (int, float)):
        return "number"
    if isinstance(value, str):
        return "string"
    if isinstance(value, list):
        return "array"
    if isinstance(value, dict):
        return "object"
    return type(value).__name__


class _Checker:
    def __init__(self) -> None:
        self.violations: list[Violation] = []

    def add(self, path: str, rule: str, message: str) -> None:
        self.violations.append(Violation(path, rule, message))

    def expect(self, value: Any, kind: type | tuple[type, ...], path: str, name: str) -> bool:
        ok = isinstance(value, kind) and not (kind is not bool and isinstance(value, bool))
        if not ok:
            self.add(path, "type", f"expected {name}, got {_type_name(value)}")
        return ok

    def field(self, obj: dict, key: str, path: str, kind: type, name: str, required: bool = True) -> Any:
        sub = _child(path, key)
        if key not in obj:
            if required:
                self.add(sub, "required-field", f"missing required field {key!r}")
            return None
        value = obj[key]
        return value if self.expect(value, kind, sub, name) else None

    def string_list(self, value: Any, path: str, non_empty: bool) -> None:
        if not self.expect(value, list, path, "array"):
            return
        if non_empty and not value:
            self.add(path, "non-empty", "must contain at least one entry")
        for i, item in enumerate(value):
            self.expect(item, str, f"{path}[{i}]", "string")


def _child(path: str, key: str) -> str:
    return f"{path}.{key}" if re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", key) else f'{path}["{key}"]'


def _check_requirements(c: _Checker, value: Any) -> set[str]:
    ids: set[str] = set()
    if not c.expect(value, list, "$.requirements", "array"):
        return ids
    for i, req in enumerate(value):
        path = f"$.requirements[{i}]"
        if not c.expect(req, dict, path, "object"):
            continue
        rid = c.field(req, "id", path, str, "string")
        if rid is not None:
            if not REQUIREMENT_ID_RE.match(rid):
                c.add(f"{path}.id", "pattern", f"requirement id {rid!r} must look like R1, R2, ...")
            if rid in ids:
                c.add(f"{path}.id", "unique", f"duplicate requirement id {rid!r}")
            ids.add(rid)
        text = c.field(req, "text", path, str, "string")
        if text is not None and not text.strip():
            c.add(f"{path}.text", "non-empty", "requirement text is empty")
        kind = c.field(req, "kind", path, str, "string")
        if kind is not None and kind not in REQUIREMENT_KINDS:
            c.add(f"{path}.kind", "enum", f"kind must be one of {REQUIREMENT_KINDS}")
    return ids


def _check_deliverables(c: _Checker, value: Any, path: str) -> None:
    if not c.expect(value, dict, path, "object"):
        return
    if not value:
        c.add(path, "non-empty", "a story needs at least one deliverable")
    for key, item in value.items():
        sub = _child(path, key)
        if not DELIVERABLE_KEY_RE.match(key):
            c.add(sub, "pattern", f"deliverable key {key!r} must be snake_case")
        if not c.expect(item, dict, sub, "object"):
            continue
        c.field(item, "definition_of_done", sub, str, "string")
        if "criteria" not in item:
            c.add(f"{sub}.criteria", "required-field", "missing required field 'criteria'")
        else:
            c.string_list(item["criteria"], f"{sub}.criteria", non_empty=True)


def _check_story(c: _Checker, story: Any, path: str, requirement_ids: set[str]) -> None:
    if not c.expect(story, dict, path, "object"):
        return
    text = c.field(story, STORY_KEY, path, str, "string")
    if text is not None and not text.strip():
        c.add(_child(path, STORY_KEY), "non-empty", "story sentence is empty")
    for key in ("who", "what", "why"):
        c.field(story, key, path, str, "string", required=False)
    if "requirement_refs" in story:
        refs = story["requirement_refs"]
        c.string_list(refs, f"{path}.requirement_refs", non_empty=False)
        if isinstance(refs, list):
            for i, ref in enumerate(refs):
                if isinstance(ref, str) and ref not in requirement_ids:
                    c.add(f"{path}.requirement_refs[{i}]", "unknown-ref", f"{ref!r} is not a requirement id")
    if DELIVERABLES_KEY not in story:
        c.add(_child(path, DELIVERABLES_KEY), "required-field", f"missing required field {DELIVERABLES_KEY!r}")
    else:
        _check_deliverables(c, story[DELIVERABLES_KEY], _child(path, DELIVERABLES_KEY))


def _check_test_case(c: _Checker, case: Any, path: str, known_refs: set[str], seen: set[str]) -> None:
    if not c.expect(case, dict, path, "object"):
        return
    tid = c.field(case, "id", path, str, "string")
    if tid is not None:
        if tid in seen:
            c.add(f"{path}.id", "unique", f"duplicate test case id {tid!r}")
        seen.add(tid)
    ref = c.field(case, "story_ref", path, str, "string")
    if ref is not None and ref not in known_refs:
        c.add(f"{path}.story_ref", "unknown-ref", f"{ref!r} names no requirement or story")
    c.field(case, "title", path, str, "string")
    if "preconditions" in case:
        c.string_list(case["preconditions"], f"{path}.preconditions", non_empty=False)
    if "steps" not in case:
        c.add(f"{path}.steps", "required-field", "missing required field 'steps'")
    else:
        c.string_list(case["steps"], f"{path}.steps", non_empty=True)
    expected = c.field(case, "expected", path, str, "string")
    if expected is not None and not expected.strip():
        c.add(f"{path}.expected", "non-empty", "expected result is empty")
    kind = c.field(case, "kind", path, str, "string", required=False)
    if kind is not None and kind not in TEST_KINDS:
        c.add(f"{path}.kind", "enum", f"kind must be one of {TEST_KINDS}")


def validate_result(parsed: Any) -> list[Violation]:
    """Every way ``parsed`` departs from the result envelope; empty when it conforms."""
    c = _Checker()
    if not c.expect(parsed, dict, "$", "object"):
        return c.violations
    for key in ("requirements", "stories", "test_cases"):
        if key not in parsed:
            c.add(f"$.{key}", "required-field", f"missing required field {key!r}")
    if "metadata" in parsed:
        c.expect(parsed["metadata"], dict, "$.metadata", "object")
    requirement_ids = _check_requirements(c, parsed["requirements"]) if "requirements" in parsed else set()
    stories = parsed.get("stories")
    n_stories = 0
    if "stories" in parsed and c.expect(stories, list, "$.stories", "array"):
        n_stories = len(stories)
        for i, story in enumerate(stories):
            _check_story(c, story, f"$.stories[{i}]", requirement_ids)
    if "test_cases" in parsed and c.expect(parsed["test_cases"], list, "$.test_cases", "array"):
        known = requirement_ids | {f"S{i}" for i in range(1, n_stories + 1)}
        seen: set[str] = set()
        for i, case in enumerate(parsed["test_cases"]):
            _check_test_case(c, case, f"$.test_cases[{i}]", known, seen)
    return c.violations


def validate_story(story: Any, requirement_ids: Iterable[str], path: str = "$") -> list[Violation]:
    c = _Checker()
    _check_story(c, story, path, set(requirement_ids))
    return c.violations


def validate_test_case(case: Any, known_refs: Iterable[str], path: str = "$") -> list[Violation]:
    c = _Checker()
    _check_test_case(c, case, path, set(known_refs), set())
    return c.violations


# conversion

_STORY_FORM = re.compile(
    r"^\s*as\s+an?\s+(?P<who>[^,]+?)\s*,\s*i\s+(?:want|need|would\s+like)\s+(?:to\s+)?(?P<what>.+?)"
    r"(?:\s*,?\s+(?:so\s+that|in\s+order\s+to)\s+(?P<why>.+?))?\s*[.!]?\s*$",
    re.IGNORECASE | re.DOTALL,
)


def split_story_sentence(sentence: str) -> tuple[str, str, str]:
    """``(who, what, why)`` from an "As a X, I want Y, so that Z" sentence; empty strings otherwise."""
    m = _STORY_FORM.match(sentence)
    if not m:
        return "", "", ""
    return m.group("who").strip(), m.group("what").strip(), (m.group("why") or "").strip()



def deliverables_from_value(value: Mapping[str, Any]) -> DeliverableSet:
    return DeliverableSet(
        tuple(Deliverable(k, v.get("definition_of_done", ""), tuple(v.get("criteria", ()))) for k, v in value.items())
    )


def story_from_value(value: Mapping[str, Any]) -> UserStory:
    return UserStory(
        story=value[STORY_KEY],
        deliverables=deliverables_from_value(value[DELIVERABLES_KEY]),
        who=value.get("who", ""),
        what=value.get("what", ""),
        why=value.get("why", ""),
        requirement_refs=tuple(value.get("requirement_refs", ())),
    )


def test_case_from_value(value: Mapping[str, Any]) -> TestCase:
    return TestCase(
        id=value["id"],
        story_ref=value["story_ref"],
        title=value["title"],
        steps=tuple(value["steps"]),
        expected=value["expected"],
        preconditions=tuple(value.get("preconditions", ())),
        kind=value.get("kind", "functional"),
    )


test_case_from_value.__test__ = False  # type: ignore[attr-defined]


def result_from_value(value: Any) -> GenerationResult:
    """Build a :class:`GenerationResult` from a parsed envelope, or raise :class:`SchemaInvalid`."""
    violations = validate_result(value)
    if violations:
        raise SchemaInvalid(violations)
    metadata = dict(value.get("metadata", {}))
    requirements = RequirementSet(
        tuple(Requirement(r["id"], r["text"], r["kind"]) for r in value["requirements"]),
        source_digest=str(metadata.get("source_digest", "")),
    )
    return GenerationResult(
        requirements=requirements,
        stories=tuple(story_from_value(s) for s in value["stories"]),
        test_cases=tuple(test_case_from_value(t) for t in value["test_cases"]),
        metadata=metadata,
    )


def parse_result(text: str) -> GenerationResult:
    return result_from_value(parse_llm_json(text))


def serialize(result: GenerationResult) -> str:
    """Canonical JSON: 4-space indent, UTF-8 text, schema key order."""
    return json.dumps(result.to_envelope(), indent=4, ensure_ascii=False)


def json_schema() -> dict[str, Any]:
    """The published JSON schema for the envelope (structural rules only)."""
    text = (resources.files("geneus") / "schemas" / "result.schema.json").read_text(encoding="utf-8")
    return json.loads(text)
