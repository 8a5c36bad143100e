"""Deterministic lint proxies for story quality.

Rules are grouped into four categories: Readability (R), Understandability
(U), Specifiability (S) and Technical aspects (T). A category score is
``1 + 4 * passed / total`` per story, averaged over stories, so it lives on
the same 1..5 scale as a Likert questionnaire. These are lint checks and say
nothing about what human raters would answer.
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass, field
from itertools import combinations
from typing import Any, Iterable, Sequence

from .errors import GeneUSError
from .schema import GenerationResult, TestCase, UserStory

CATEGORIES = ("R", "U", "S", "T")

DEFAULT_ACTORS = (
    "clinician",
    "doctor",
    "nurse",
    "receptionist",
    "administrator",
    "user",
    "patient",
    "manager",
)

MIN_READING_EASE = 30.0
MAX_STORY_WORDS = 40
MIN_DOD_WORDS = 5
DUPLICATE_THRESHOLD = 0.9

VAGUE_TERMS = (
    "etc",
    "and/or",
    "as appropriate",
    "as needed",
    "if possible",
    "user-friendly",
    "user friendly",
    "easy to use",
    "fast",
    "quickly",
    "some",
    "various",
    "tbd",
)

RULES: dict[str, str] = {
    "R.reading-ease": "R",
    "R.no-repeated-words": "R",
    "R.clean-characters": "R",
    "U.who": "U",
    "U.what": "U",
    "U.why": "U",
    "U.no-vague-terms": "U",
    "S.criteria": "S",
    "S.definition-of-done": "S",
    "S.requirement-ref": "S",
    "S.unit-size": "S",
    "S.unique": "S",
    "T.default-deliverables": "T",
    "T.test-coverage": "T",
    "T.done-detail": "T",
}


class EmptyText(GeneUSError, ValueError):
    pass


@dataclass(frozen=True)
class CheckOutcome:
    rule_id: str
    passed: bool
    detail: str = ""

    def __post_init__(self) -> None:
        if self.rule_id not in RULES:
            raise ValueError(f"unregistered rule {self.rule_id!r}")

    @property
    def category(self) -> str:
        return RULES[self.rule_id]

    def to_dict(self) -> dict[str, Any]:
        return {"rule_id": self.rule_id, "passed": self.passed, "detail": self.detail, "category": self.category}


@dataclass
class QualityReport:
    per_story: list[tuple[int, list[CheckOutcome]]]
    category_scores: dict[str, float]
    duplicates: list[tuple[int, int, float]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "category_scores": self.category_scores,
            "duplicates": [{"i": i, "j": j, "similarity": s} for i, j, s in self.duplicates],
            "stories": [
                {"story_index": idx, "checks": [c.to_dict() for c in checks]} for idx, checks in self.per_story
            ],
            "warnings": self.warnings,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=4, ensure_ascii=False)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["story_index", "rule_id", "passed", "category"])
        for idx, checks in self.per_story:
            for c in checks:
                writer.writerow([idx, c.rule_id, str(c.passed).lower(), c.category])
        return buf.getvalue()

    def failures(self) -> list[tuple[int, CheckOutcome]]:
        return [(idx, c) for idx, checks in self.per_story for c in checks if not c.passed]


# text statistics

_WORD = re.compile(r"[A-Za-z0-9]+(?:'[A-Za-z]+)*")
_VOWEL_GROUP = re.compile(r"[aeiouy]+")
_SENTENCE_END = re.compile(r"[.!?]+")


def words(text: str) -> list[str]:
    return _WORD.findall(text)


def syllables(word: str) -> int:
    return max(1, len(_VOWEL_GROUP.findall(word.lower())))


def sentence_count(text: str) -> int:
    return max(1, len(_SENTENCE_END.findall(text)))


def readability_score(text: str) -> float:
    """Flesch reading ease: 206.835 - 1.015 (words/sentences) - 84.6 (syllables/words)."""
    tokens = words(text)
    if not tokens:
        raise EmptyText("readability needs at least one word")
    n_words = len(tokens)
    n_syllables = sum(syllables(w) for w in tokens)
    return 206.835 - 1.015 * (n_words / sentence_count(text)) - 84.6 * (n_syllables / n_words)


# who / what / why

_AS_A = re.compile(r"^\s*as\s+an?\s+(?P<actor>[a-z][\w\- ]*?)\s*,", re.IGNORECASE)
_WHAT = re.compile(
    r"\b(?:should|shall|must|can|will|wants?\s+to|needs?\s+to|would\s+like\s+to)\s+(?:be\s+able\s+to\s+)?[a-z]+",
    re.IGNORECASE,
)
_WHY = re.compile(r"\b(?:so\s+that|in\s+order\s+to|to\s+ensure)\b", re.IGNORECASE)


def _actor_pattern(actors: Iterable[str]) -> str:
    alts = "|".join(sorted((re.escape(a) for a in actors), key=len, reverse=True))
    return rf"(?:{alts})(?:s|es)?"


def detect_actor(sentence: str, actors: Sequence[str] = DEFAULT_ACTORS) -> str | None:
    """Actor named by the sentence, if any.

    Accepts the "As a X," opener, a lexicon actor opening the sentence, or a
    lexicon actor as the object of allow/enable/let/permit/help.
    """
    m = _AS_A.match(sentence)
    if m:
        return m.group("actor")
    actor = _actor_pattern(actors)
    m = re.match(rf"^\s*(?:(?:the|a|an|all|every|each)\s+)?(?P<a>{actor})\b", sentence, re.IGNORECASE)
    if m:
        return m.group("a")
    m = re.search(
        rf"\b(?:allows?|enables?|lets?|permits?|helps?)\s+(?:the\s+|all\s+|authori[sz]ed\s+)?(?P<a>{actor})\b",
        sentence,
        re.IGNORECASE,
    )
    return m.group("a") if m else None


def check_who_what_why(
    story: UserStory, actors: Sequence[str] = DEFAULT_ACTORS
) -> tuple[CheckOutcome, CheckOutcome, CheckOutcome]:
    sentence = story.story
    actor = story.who or detect_actor(sentence, actors)
    what = story.what or (m.group(0) if (m := _WHAT.search(sentence)) else "")
    why = story.why or (m.group(0) if (m := _WHY.search(sentence)) else "")
    return (
        CheckOutcome("U.who", bool(actor), f"actor: {actor}" if actor else "no actor found"),
        CheckOutcome("U.what", bool(what), f"action: {what}" if what else "no modal + verb clause"),
        CheckOutcome("U.why", bool(why), f"purpose: {why}" if why else "no purpose clause"),
    )


# duplicates

_SUFFIXES = ("ations", "ation", "ments", "ment", "ings", "ing", "ies", "ied", "ers", "er", "ed", "es", "ly", "s")


def stem(token: str) -> str:
    for suffix in _SUFFIXES:
        if token.endswith(suffix) and len(token) - len(suffix) >= 3:
            return token[: -len(suffix)]
    return token


def story_tokens(story: UserStory) -> frozenset[str]:
    text = f"{story.story} {story.what}".lower()
    return frozenset(stem(t) for t in re.findall(r"[a-z0-9]+", text))


def jaccard(a: frozenset[str] | set[str], b: frozenset[str] | set[str]) -> float:
    union = len(a | b)
    return len(a & b) / union if union else 0.0


def detect_duplicates(stories: Sequence[UserStory], threshold: float = DUPLICATE_THRESHOLD) -> list[tuple[int, int, float]]:
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    tokens = [story_tokens(s) for s in stories]
    pairs = []
    for i, j in combinations(range(len(stories)), 2):
        sim = jaccard(tokens[i], tokens[j])
        if sim >= threshold:
            pairs.append((i, j, sim))
    return pairs


# rule groups


def readability_checks(story: UserStory) -> list[CheckOutcome]:
    text = story.story
    try:
        score = readability_score(text)
    except EmptyText:
        score = float("-inf")
    repeated = re.search(r"\b(\w+)\s+\1\b", text, re.IGNORECASE)
    odd = [ch for ch in text if not (ch.isprintable() or ch in "\n\t") or ch == "�"]
    return [
        CheckOutcome("R.reading-ease", score >= MIN_READING_EASE, f"Flesch reading ease {score:.1f}"),
        CheckOutcome(
            "R.no-repeated-words", repeated is None, f"repeated word {repeated.group(1)!r}" if repeated else ""
        ),
        CheckOutcome("R.clean-characters", not odd, f"{len(odd)} unprintable characters" if odd else ""),
    ]


def understandability_checks(story: UserStory, actors: Sequence[str] = DEFAULT_ACTORS) -> list[CheckOutcome]:
    lowered = story.story.lower()
    vague = [t for t in VAGUE_TERMS if re.search(rf"(?<![\w/-]){re.escape(t)}(?![\w/-])", lowered)]
    return [
        *check_who_what_why(story, actors),
        CheckOutcome("U.no-vague-terms", not vague, "vague: " + ", ".join(vague) if vague else ""),
    ]


def specifiability_check(story: UserStory, index: int = 0) -> list[CheckOutcome]:
    base = f"$.stories[{index}].Deliverables"
    empty_criteria = [f"{base}.{d.key}.criteria" for d in story.deliverables if not d.criteria]
    has_criteria = len(story.deliverables) > 0 and not empty_criteria
    no_dod = [f"{base}.{d.key}.definition_of_done" for d in story.deliverables if not d.definition_of_done.strip()]
    n_words = len(words(story.story))
    return [
        CheckOutcome(
            "S.criteria",
            has_criteria,
            "empty criteria at " + ", ".join(empty_criteria) if empty_criteria else ("" if has_criteria else "no deliverables"),
        ),
        CheckOutcome("S.definition-of-done", not no_dod, "missing at " + ", ".join(no_dod) if no_dod else ""),
        CheckOutcome(
            "S.requirement-ref",
            bool(story.requirement_refs),
            "" if story.requirement_refs else f"$.stories[{index}].requirement_refs is empty",
        ),
        CheckOutcome("S.unit-size", n_words <= MAX_STORY_WORDS, f"{n_words} words (limit {MAX_STORY_WORDS})"),
    ]


def technical_checks(story: UserStory, test_cases: Sequence[TestCase], index: int = 0) -> list[CheckOutcome]:
    missing = story.deliverables.missing_defaults()
    covered = {t.story_ref for t in test_cases}
    own_id = f"S{index + 1}"
    uncovered = [r for r in story.requirement_refs if r not in covered]
    tested = bool(story.requirement_refs) and not uncovered or own_id in covered
    thin = [d.key for d in story.deliverables if len(words(d.definition_of_done)) < MIN_DOD_WORDS]
    return [
        CheckOutcome("T.default-deliverables", not missing, "missing: " + ", ".join(missing) if missing else ""),
        CheckOutcome("T.test-coverage", tested, "untested: " + ", ".join(uncovered) if uncovered else ""),
        CheckOutcome("T.done-detail", not thin, "thin definition of done: " + ", ".join(thin) if thin else ""),
    ]


def story_checks(
    story: UserStory, index: int, test_cases: Sequence[TestCase] = (), actors: Sequence[str] = DEFAULT_ACTORS
) -> list[CheckOutcome]:
    return [
        *readability_checks(story),
        *understandability_checks(story, actors),
        *specifiability_check(story, index),
        *technical_checks(story, test_cases, index),
    ]


def category_scores(per_story: Sequence[Sequence[CheckOutcome]]) -> dict[str, float]:
    scores: dict[str, float] = {}
    for cat in CATEGORIES:
        values = []
        for checks in per_story:
            mine = [c for c in checks if c.category == cat]
            if mine:
                values.append(1.0 + 4.0 * sum(c.passed for c in mine) / len(mine))
        # no stories means nothing failed
        scores[cat] = sum(values) / len(values) if values else 5.0
    return scores


def uniqueness_checks(n_stories: int, duplicates: Sequence[tuple[int, int, float]]) -> list[CheckOutcome]:
    partners: dict[int, list[str]] = {}
    for i, j, sim in duplicates:
        partners.setdefault(i, []).append(f"{j} ({sim:.2f})")
        partners.setdefault(j, []).append(f"{i} ({sim:.2f})")
    return [
        CheckOutcome("S.unique", k not in partners, "near-duplicate of story " + ", ".join(partners[k]) if k in partners else "")
        for k in range(n_stories)
    ]


def rust_report(
    result: GenerationResult,
    duplicate_threshold: float = DUPLICATE_THRESHOLD,
    actors: Sequence[str] = DEFAULT_ACTORS,
) -> QualityReport:
    duplicates = detect_duplicates(result.stories, duplicate_threshold)
    unique = uniqueness_checks(len(result.stories), duplicates)
    per_story = [
        (i, [*story_checks(s, i, result.test_cases, actors), unique[i]]) for i, s in enumerate(result.stories)
    ]
    warnings = [
        f"story {i}: missing default deliverables {', '.join(s.deliverables.missing_defaults())}"
        for i, s in enumerate(result.stories)
        if s.deliverables.missing_defaults()
    ]
    return QualityReport(
        per_story=per_story,
        category_scores=category_scores([checks for _, checks in per_story]),
        duplicates=duplicates,
        warnings=warnings,
    )
