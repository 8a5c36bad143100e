"""Shared helpers: a scripted stage-aware model, a call log and random results."""

from __future__ import annotations

import json
import random
import re
import string
import threading
from pathlib import Path

from geneus.promptkit import Completion, ModelRequest
from geneus.provider import normalize_digest
from geneus.schema import (
    DEFAULT_DELIVERABLES,
    Deliverable,
    DeliverableSet,
    GenerationResult,
    Requirement,
    RequirementSet,
    TestCase,
    UserStory,
)
from geneus.storygen import Templates

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"
DATA = Path(__file__).resolve().parent / "data"

REFINED_PREFIX = "[refined]"
_REQ_LINE = re.compile(r"^(R[0-9]+) \((functional|nonfunctional)\): (.+)$")
_SENTENCE = re.compile(r"[^.!?\n]+[.!?]?")


def stage_of(request: ModelRequest, templates: Templates | None = None) -> str:
    """Which template produced ``request``: refine, requirements, test_cases, stories or repair."""
    t = templates or Templates.load()
    system = request.messages[0].content
    for name in ("refine", "requirements", "test_cases", "stories"):
        if system == getattr(t, name).instruction:
            return name
    if system.startswith(t.repair.instruction.split("{task}")[0]):
        return "repair"
    return "unknown"


def requirement_lines(text: str) -> list[tuple[str, str, str]]:
    return [(m.group(1), m.group(2), m.group(3)) for m in map(_REQ_LINE.match, text.splitlines()) if m]


def requirements_reply(text: str, limit: int = 6) -> str:
    body = text.replace(REFINED_PREFIX, "")
    sentences = [s.strip() for s in _SENTENCE.findall(body) if re.search(r"[A-Za-z]{3}", s)]
    items = [f"The system must support this need: {s.rstrip('.!?')}." for s in sentences[:limit]]
    if not items:
        items = ["The system must store the records described in the document."]
    half = max(1, len(items) - 1)
    return json.dumps({"functional": items[:half], "nonfunctional": items[half:]})


def test_cases_reply(text: str) -> str:
    cases = [
        {
            "id": f"T{n}",
            "story_ref": rid,
            "title": f"Check {rid}",
            "preconditions": ["The system is running"],
            "steps": [f"Exercise the behaviour required by {rid}", "Observe the result"],
            "expected": f"The behaviour required by {rid} is observed.",
            "kind": "functional",
        }
        for n, (rid, _, _) in enumerate(requirement_lines(text), 1)
    ]
    return json.dumps(cases)


def deliverables_for(topic: str) -> dict:
    return {
        key: {
            "definition_of_done": f"The {key.replace('_', ' ')} work for {topic} is finished and reviewed.",
            "criteria": [f"{key.replace('_', ' ')} reviewed by the team"],
        }
        for key in DEFAULT_DELIVERABLES
    }


def stories_reply(text: str) -> str:
    stories = [
        {
            "User Story": f"As a user, I want the feature for {rid}, so that my work is supported.",
            "requirement_refs": [rid],
            "Deliverables": deliverables_for(rid),
        }
        for rid, _, _ in requirement_lines(text)
    ]
    return json.dumps(stories)


def good_result_value() -> dict:
    """An envelope whose single story passes every quality rule."""
    return {
        "requirements": [{"id": "R1", "text": "The system must alert nurses.", "kind": "functional"}],
        "stories": [{"User Story": "As a nurse, I want to see alerts, so that I can act.",
                     "requirement_refs": ["R1"], "Deliverables": deliverables_for("alerts")}],
        "test_cases": [{"id": "T1", "story_ref": "R1", "title": "alerts", "steps": ["step"],
                        "expected": "alert shown"}],
        "metadata": {},
    }


def scripted_reply(request: ModelRequest, templates: Templates | None = None) -> str:
    """A plausible reply for every pipeline stage, derived from the request alone."""
    stage = stage_of(request, templates)
    user = request.messages[-1].content
    if stage == "refine":
        return f"{REFINED_PREFIX}\n{user.strip()}"
    if stage == "requirements":
        return requirements_reply(user)
    if stage == "test_cases":
        return test_cases_reply(user)
    if stage == "stories":
        return stories_reply(user)
    raise AssertionError(f"unexpected request for stage {stage}")


class ScriptedModel:
    """Provider answering with :func:`scripted_reply`; ``overrides`` replace replies per stage."""

    def __init__(self, overrides: dict | None = None):
        self.templates = Templates.load()
        self.overrides = dict(overrides or {})
        self.calls: list[tuple[str, ModelRequest]] = []
        self._lock = threading.Lock()

    def complete(self, request: ModelRequest) -> Completion:
        stage = stage_of(request, self.templates)
        with self._lock:
            self.calls.append((stage, request))
            n = sum(1 for s, _ in self.calls if s == stage)
        override = self.overrides.get(stage)
        if callable(override):
            out = override(request, n)
            if out is not None:
                return out if isinstance(out, Completion) else Completion(out)
        elif override is not None:
            return override if isinstance(override, Completion) else Completion(override)
        return Completion(scripted_reply(request, self.templates))

    @property
    def stages(self) -> list[str]:
        return [s for s, _ in self.calls]


class CallLog:
    """Wraps a provider and keeps every request it forwards."""

    def __init__(self, inner):
        self.inner = inner
        self.requests: list[ModelRequest] = []

    def complete(self, request: ModelRequest) -> Completion:
        self.requests.append(request)
        return self.inner.complete(request)

    @property
    def digests(self) -> list[str]:
        return [normalize_digest(r) for r in self.requests]


# random valid results

_WORDS = (
    "patient record clinic report doctor nurse schedule appointment update view create alert "
    "secure store export audit backup data summary treatment review"
).split()


def _phrase(rng: random.Random, lo: int = 2, hi: int = 8) -> str:
    words = [rng.choice(_WORDS) for _ in range(rng.randint(lo, hi))]
    if rng.random() < 0.2:
        words.append("".join(rng.choice(string.ascii_letters + "éü中\"\\") for _ in range(3)))
    return " ".join(words)


def random_result(rng: random.Random) -> GenerationResult:
    n_req = rng.randint(1, 5)
    requirements = RequirementSet(
        tuple(
            Requirement(f"R{i + 1}", f"The system must {_phrase(rng)}.", rng.choice(("functional", "nonfunctional")))
            for i in range(n_req)
        ),
        source_digest="".join(rng.choice("0123456789abcdef") for _ in range(64)),
    )
    ids = requirements.ids
    stories = []
    for _ in range(rng.randint(0, 4)):
        keys = rng.sample(list(DEFAULT_DELIVERABLES) + ["security_review"], rng.randint(1, 4))
        stories.append(
            UserStory(
                story=f"As a {rng.choice(('nurse', 'doctor'))}, I want to {_phrase(rng)}.",
                deliverables=DeliverableSet(
                    tuple(
                        Deliverable(k, _phrase(rng, 3, 10), tuple(_phrase(rng) for _ in range(rng.randint(1, 3))))
                        for k in keys
                    )
                ),
                who=rng.choice(("", "nurse")),
                what=rng.choice(("", _phrase(rng))),
                why=rng.choice(("", _phrase(rng))),
                requirement_refs=tuple(rng.sample(ids, rng.randint(0, len(ids)))),
            )
        )
    refs = ids + [f"S{i + 1}" for i in range(len(stories))]
    cases = tuple(
        TestCase(
            id=f"T{i + 1}",
            story_ref=rng.choice(refs),
            title=_phrase(rng),
            steps=tuple(_phrase(rng) for _ in range(rng.randint(1, 3))),
            expected=_phrase(rng),
            preconditions=tuple(_phrase(rng) for _ in range(rng.randint(0, 2))),
            kind=rng.choice(("functional", "negative", "boundary")),
        )
        for i in range(rng.randint(0, 5))
    )
    metadata = {
        "model_id": "gpt-4-1106-preview",
        "temperature": rng.choice((0.0, 0.2, 0.7)),
        "seed": rng.choice((None, rng.randint(0, 1000))),
        "source_digest": requirements.source_digest,
    }
    return GenerationResult(requirements, tuple(stories), cases, metadata)
