"""Repeated-run stability and RaT-versus-IO comparison for step 1."""

from __future__ import annotations

import csv
import io
import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from typing import Any, Callable, Sequence

from .errors import ArmFailed
from .ingest import SourceDocument, extract_text
from .promptkit import Provider
from .quality import jaccard
from .schema import GenerationResult, RequirementSet
from .storygen import DEFAULT_CONFIG, PipelineConfig, extract_requirements, run_pipeline

DEFAULT_RUNS = 10
RELAXED_MATCH = 0.7

_PUNCT = re.compile(r"[^\w\s]")
_WS = re.compile(r"\s+")


def normalize_requirement(text: str) -> str:
    return _WS.sub(" ", _PUNCT.sub("", text.lower())).strip()


def _token_set(text: str) -> frozenset[str]:
    return frozenset(normalize_requirement(text).split())


def _texts(value: RequirementSet | Sequence[str]) -> list[str]:
    return value.texts if isinstance(value, RequirementSet) else list(value)


def exact_similarity(a: Sequence[str], b: Sequence[str]) -> float:
    """Jaccard over normalized requirement texts; two empty sets count as identical."""
    sa = {normalize_requirement(t) for t in a}
    sb = {normalize_requirement(t) for t in b}
    if not sa and not sb:
        return 1.0
    return jaccard(sa, sb)


def match_requirements(
    a: Sequence[str], b: Sequence[str], threshold: float = RELAXED_MATCH
) -> list[tuple[int, int, float]]:
    """Greedy one-to-one pairing of requirements whose token Jaccard reaches ``threshold``.

    Candidates are taken best-first; ties break on the normalized texts
    (order-free within a pair) so the pairing does not depend on which side
    is which or on input order.
    """
    na = [normalize_requirement(t) for t in a]
    nb = [normalize_requirement(t) for t in b]
    ta = [_token_set(t) for t in a]
    tb = [_token_set(t) for t in b]
    candidates = []
    for i in range(len(a)):
        for j in range(len(b)):
            sim = jaccard(ta[i], tb[j])
            if sim >= threshold:
                lo, hi = sorted((na[i], nb[j]))
                candidates.append((-sim, lo, hi, i, j))
    candidates.sort()
    used_a: set[int] = set()
    used_b: set[int] = set()
    matches = []
    for neg, _, _, i, j in candidates:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        matches.append((i, j, -neg))
    return matches


def relaxed_similarity(a: Sequence[str], b: Sequence[str], threshold: float = RELAXED_MATCH) -> float:
    """Matched pairs over the size of the matched union."""
    ua = sorted({normalize_requirement(t) for t in a})
    ub = sorted({normalize_requirement(t) for t in b})
    if not ua and not ub:
        return 1.0
    matched = len(match_requirements(ua, ub, threshold))
    return matched / (len(ua) + len(ub) - matched)


@dataclass
class StabilityScore:
    mean_pairwise_similarity: float
    n_runs: int
    per_pair: list[list[float]]
    relaxed_mean: float = 1.0
    relaxed_per_pair: list[list[float]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_runs": self.n_runs,
            "mean_pairwise_similarity": self.mean_pairwise_similarity,
            "relaxed_mean": self.relaxed_mean,
            "relaxed_threshold": RELAXED_MATCH,
            "per_pair": self.per_pair,
            "relaxed_per_pair": self.relaxed_per_pair,
        }

    def matrix_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["run", *range(self.n_runs)])
        for i, row in enumerate(self.per_pair):
            writer.writerow([i, *(f"{v:.6f}" for v in row)])
        return buf.getvalue()


def _pairwise(sets: Sequence[list[str]], sim: Callable[[Sequence[str], Sequence[str]], float]) -> tuple[list[list[float]], float]:
    n = len(sets)
    matrix = [[1.0] * n for _ in range(n)]
    values = []
    for i, j in combinations(range(n), 2):
        v = sim(sets[i], sets[j])
        matrix[i][j] = matrix[j][i] = v
        values.append(v)
    return matrix, sum(values) / len(values)


def requirement_stability(sets: Sequence[RequirementSet | Sequence[str]]) -> StabilityScore:
    if len(sets) < 2:
        raise ValueError("stability needs at least two requirement sets")
    texts = [_texts(s) for s in sets]
    matrix, mean = _pairwise(texts, exact_similarity)
    relaxed, relaxed_mean = _pairwise(texts, relaxed_similarity)
    return StabilityScore(mean, len(sets), matrix, relaxed_mean, relaxed)


@dataclass
class RepeatedRuns:
    results: list[GenerationResult]
    failures: list[tuple[int, BaseException]] = field(default_factory=list)
    run_indices: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.results)

    def __iter__(self):
        return iter(self.results)

    def __getitem__(self, i: int) -> GenerationResult:
        return self.results[i]


def run_repeated(
    doc: SourceDocument,
    provider: Provider,
    n: int = DEFAULT_RUNS,
    config: PipelineConfig = DEFAULT_CONFIG,
    seeds: Sequence[int | None] | None = None,
    on_result: Callable[[int, GenerationResult], Any] | None = None,
    max_workers: int = 1,
) -> RepeatedRuns:
    """Run the whole pipeline ``n`` times with one configuration.

    ``seeds`` optionally gives each run its own sampling seed. ``on_result``
    is called for every successful run (e.g. to persist it). A failed run is
    recorded and the others continue; if every run fails the first error is
    raised.
    """
    if n < 2:
        raise ValueError(f"repeated runs need n >= 2, got {n}")
    if seeds is not None and len(seeds) != n:
        raise ValueError("need one seed per run")

    def one(i: int) -> GenerationResult:
        cfg = config.with_seed(seeds[i]) if seeds is not None else config
        return run_pipeline(doc, provider, cfg)

    outcomes: list[GenerationResult | BaseException] = []
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            futures = [pool.submit(one, i) for i in range(n)]
            for fut in futures:
                exc = fut.exception()
                outcomes.append(exc if exc is not None else fut.result())
    else:
        for i in range(n):
            try:
                outcomes.append(one(i))
            except Exception as exc:
                outcomes.append(exc)

    runs = RepeatedRuns(results=[])
    for i, outcome in enumerate(outcomes):
        if isinstance(outcome, BaseException):
            runs.failures.append((i, outcome))
        else:
            runs.results.append(outcome)
            runs.run_indices.append(i)
            if on_result is not None:
                on_result(i, outcome)
    if not runs.results:
        raise runs.failures[0][1]
    return runs


@dataclass
class ComparisonReport:
    rat_requirements: RequirementSet
    io_requirements: RequirementSet
    matched: list[tuple[str, str, float]]
    rat_only: list[str]
    io_only: list[str]

    def to_dict(self) -> dict[str, Any]:
        return {
            "rat_requirements": self.rat_requirements.texts,
            "io_requirements": self.io_requirements.texts,
            "matched": [{"rat": a, "io": b, "similarity": s} for a, b, s in self.matched],
            "rat_only": self.rat_only,
            "io_only": self.io_only,
            "match_threshold": RELAXED_MATCH,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=4, ensure_ascii=False)


def diff_requirements(rat: RequirementSet, io_: RequirementSet, threshold: float = RELAXED_MATCH) -> ComparisonReport:
    a, b = rat.texts, io_.texts
    pairs = match_requirements(a, b, threshold)
    hit_a = {i for i, _, _ in pairs}
    hit_b = {j for _, j, _ in pairs}
    return ComparisonReport(
        rat_requirements=rat,
        io_requirements=io_,
        matched=[(a[i], b[j], s) for i, j, s in pairs],
        rat_only=[t for i, t in enumerate(a) if i not in hit_a],
        io_only=[t for j, t in enumerate(b) if j not in hit_b],
    )


def compare_rat_vs_io(
    doc: SourceDocument, provider: Provider, config: PipelineConfig = DEFAULT_CONFIG
) -> ComparisonReport:
    """Extract requirements once through a RaT block and once through a single IO call."""
    text = extract_text(doc)
    try:
        rat, _ = extract_requirements(text, provider, config, mode="rat")
    except Exception as exc:
        raise ArmFailed("rat", exc) from exc
    try:
        io_, _ = extract_requirements(text, provider, config, mode="io")
    except Exception as exc:
        raise ArmFailed("io", exc, other=rat) from exc
    return diff_requirements(rat, io_)
