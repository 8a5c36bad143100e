"""IO, chain-of-thought and Refine-and-Thought prompting blocks.

Every block talks to the model through a provider object exposing
``complete(request) -> Completion`` and records each exchange in a
:class:`Transcript`. A RaT block is a two-step chain: a refine call that
cleans the input, then a thought call that sees only the refined text.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence, Union

from .errors import (
    AbortedAtStep,
    ChainBlockFailed,
    MissingBinding,
    RefineFailed,
    TemplateNotFound,
    ThoughtFailed,
)

ROLES = ("system", "user", "assistant")
FINISH_REASONS = ("stop", "length", "error")
DEFAULT_MODEL = "gpt-4-1106-preview"
DEFAULT_TEMPERATURE = 0.2
REFINE_TEMPLATE_ID = "refine.v1"

_PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


# templates


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    instruction: str
    placeholders: frozenset[str] = field(default=frozenset())

    @classmethod
    def from_text(cls, id: str, instruction: str) -> "PromptTemplate":
        return cls(id, instruction, frozenset(_PLACEHOLDER.findall(instruction)))

    @property
    def version(self) -> str:
        _, _, version = self.id.rpartition(".")
        return version if version.startswith("v") else ""


def render(template: PromptTemplate, bindings: Mapping[str, str]) -> str:
    """Substitute ``{name}`` placeholders in a single pass.

    Bound values are never rescanned, so a value that itself contains
    ``{name}`` is inserted literally.
    """
    for name in sorted(template.placeholders):
        if name not in bindings:
            raise MissingBinding(name)
    return _PLACEHOLDER.sub(lambda m: str(bindings[m.group(1)]), template.instruction)


def default_templates_dir() -> Path:
    return Path(str(resources.files("geneus") / "templates"))


def load_template(template_id: str, templates_dir: str | Path | None = None) -> PromptTemplate:
    base = Path(templates_dir) if templates_dir is not None else default_templates_dir()
    path = base / f"{template_id}.txt"
    if not path.is_file():
        raise TemplateNotFound(f"template {template_id!r} not found in {base}")
    return PromptTemplate.from_text(template_id, path.read_text(encoding="utf-8").strip())


# model I/O


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"unknown message role {self.role!r}")


@dataclass(frozen=True)
class ModelRequest:
    messages: tuple[Message, ...]
    model_id: str = DEFAULT_MODEL
    temperature: float = DEFAULT_TEMPERATURE
    max_output: int = 4096
    seed: int | None = None

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("a request needs at least one message")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature must be within [0, 2], got {self.temperature}")
        if self.max_output <= 0:
            raise ValueError("max_output must be positive")
        object.__setattr__(self, "messages", tuple(self.messages))

    def to_dict(self) -> dict[str, Any]:
        return {
            "model": self.model_id,
            "messages": [{"role": m.role, "content": m.content} for m in self.messages],
            "temperature": self.temperature,
            "max_output": self.max_output,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ModelRequest":
        return cls(
            messages=tuple(Message(m["role"], m["content"]) for m in data["messages"]),
            model_id=data.get("model", DEFAULT_MODEL),
            temperature=data.get("temperature", DEFAULT_TEMPERATURE),
            max_output=data.get("max_output", 4096),
            seed=data.get("seed"),
        )


@dataclass(frozen=True)
class Completion:
    text: str
    finish_reason: str = "stop"
    usage: Mapping[str, int] | None = None

    def __post_init__(self) -> None:
        if self.finish_reason not in FINISH_REASONS:
            raise ValueError(f"unknown finish_reason {self.finish_reason!r}")

    @property
    def truncated(self) -> bool:
        return self.finish_reason == "length"

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"text": self.text, "finish_reason": self.finish_reason}
        if self.usage is not None:
            out["usage"] = dict(self.usage)
        return out


@dataclass(frozen=True)
class GenerationParams:
    """Sampling settings applied to every request a block issues."""

    model_id: str = DEFAULT_MODEL
    temperature: float = DEFAULT_TEMPERATURE
    max_output: int = 4096
    seed: int | None = None

    def request(self, instruction: str, content: str) -> ModelRequest:
        # one fresh system+user exchange per call keeps contexts short
        return ModelRequest(
            messages=(Message("system", instruction), Message("user", content)),
            model_id=self.model_id,
            temperature=self.temperature,
            max_output=self.max_output,
            seed=self.seed,
        )


class Provider(Protocol):
    def complete(self, request: ModelRequest) -> Completion: ...


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


@dataclass
class TranscriptStep:
    request: ModelRequest
    completion: Completion
    error: str | None = None
    label: str = ""

    def to_dict(self) -> dict[str, Any]:
        out = {"label": self.label, "request": self.request.to_dict(), "completion": self.completion.to_dict()}
        if self.error is not None:
            out["error"] = self.error
        return out


@dataclass
class Transcript:
    """Append-only record of every model exchange in one execution."""

    steps: list[TranscriptStep] = field(default_factory=list)
    clock: Callable[[], datetime] = field(default=_utcnow, repr=False, compare=False)
    started_at: datetime | None = None
    finished_at: datetime | None = None

    def __len__(self) -> int:
        return len(self.steps)

    def append(self, step: TranscriptStep) -> None:
        now = self.clock()
        if self.started_at is None:
            self.started_at = now
        self.finished_at = now
        self.steps.append(step)

    def call(self, provider: Provider, request: ModelRequest, label: str = "") -> Completion:
        """Issue one provider call and log it, failures included."""
        try:
            completion = provider.complete(request)
        except Exception as exc:
            self.append(TranscriptStep(request, Completion("", "error"), error=f"{type(exc).__name__}: {exc}", label=label))
            raise
        self.append(TranscriptStep(request, completion, label=label))
        return completion

    @property
    def requests(self) -> list[ModelRequest]:
        return [s.request for s in self.steps]

    def to_dict(self, timestamps: bool = True) -> dict[str, Any]:
        out: dict[str, Any] = {"steps": [s.to_dict() for s in self.steps]}
        if timestamps:
            out["started_at"] = self.started_at.isoformat() if self.started_at else None
            out["finished_at"] = self.finished_at.isoformat() if self.finished_at else None
        return out


@dataclass(frozen=True)
class RaTTrace:
    refine_request: ModelRequest
    refine_output: Completion
    thought_request: ModelRequest
    thought_output: Completion

    def to_dict(self) -> dict[str, Any]:
        return {
            "refine_request": self.refine_request.to_dict(),
            "refine_output": self.refine_output.to_dict(),
            "thought_request": self.thought_request.to_dict(),
            "thought_output": self.thought_output.to_dict(),
        }


# blocks


def run_io(
    provider: Provider,
    instruction: str,
    input: str,
    params: GenerationParams = GenerationParams(),
    transcript: Transcript | None = None,
    label: str = "io",
) -> tuple[Completion, Transcript]:
    if not input:
        raise ValueError("input must be non-empty")
    transcript = transcript if transcript is not None else Transcript()
    try:
        completion = transcript.call(provider, params.request(instruction, input), label)
    except Exception as exc:
        exc.transcript = transcript  # type: ignore[attr-defined]
        raise
    return completion, transcript


def _cot_content(input: str, outputs: Sequence[str], include_input: bool) -> str:
    if not outputs:
        return input
    if not include_input:
        return "\n\n".join(outputs)
    parts = [input]
    parts.extend(f"[Step {i} output]\n{text}" for i, text in enumerate(outputs, 1))
    return "\n\n".join(parts)


def run_cot(
    provider: Provider,
    input: str,
    step_instructions: Sequence[str],
    params: GenerationParams = GenerationParams(),
    transcript: Transcript | None = None,
    include_input: bool = True,
    labels: Sequence[str] | None = None,
) -> tuple[Completion, Transcript]:
    """Run instructions in sequence, each call seeing every earlier output.

    With ``include_input=False`` steps after the first see only the earlier
    outputs, not the original input; that is the RaT threading.
    """
    if not step_instructions:
        raise ValueError("need at least one step instruction")
    if not input:
        raise ValueError("input must be non-empty")
    transcript = transcript if transcript is not None else Transcript()
    outputs: list[str] = []
    completion = None
    for i, instruction in enumerate(step_instructions, 1):
        request = params.request(instruction, _cot_content(input, outputs, include_input))
        label = labels[i - 1] if labels else f"cot{i}"
        try:
            completion = transcript.call(provider, request, label)
        except Exception as exc:
            raise AbortedAtStep(i, exc, transcript) from exc
        outputs.append(completion.text)
    assert completion is not None
    return completion, transcript


def refine_instruction(templates_dir: str | Path | None = None) -> str:
    return load_template(REFINE_TEMPLATE_ID, templates_dir).instruction


def run_rat(
    provider: Provider,
    input: str,
    thought_instruction: str,
    params: GenerationParams = GenerationParams(),
    transcript: Transcript | None = None,
    refine: str | None = None,
    label: str = "rat",
) -> tuple[Completion, RaTTrace]:
    """One Refine-and-Thought block: exactly two calls, refine then thought."""
    refine = refine if refine is not None else refine_instruction()
    transcript = transcript if transcript is not None else Transcript()
    first = len(transcript)
    try:
        completion, _ = run_cot(
            provider,
            input,
            [refine, thought_instruction],
            params,
            transcript,
            include_input=False,
            labels=[f"{label}.refine", f"{label}.thought"],
        )
    except AbortedAtStep as exc:
        if exc.step == 1:
            raise RefineFailed(exc.cause, transcript) from exc.cause
        raise ThoughtFailed(exc.cause, transcript, transcript.steps[first].completion) from exc.cause
    refine_step, thought_step = transcript.steps[first], transcript.steps[first + 1]
    trace = RaTTrace(refine_step.request, refine_step.completion, thought_step.request, thought_step.completion)
    return completion, trace


@dataclass
class ChainState:
    input: str
    outputs: list[str] = field(default_factory=list)


Selector = Union[str, int, Callable[[ChainState], str]]


@dataclass(frozen=True)
class RatBlock:
    """``source`` is ``"input"``, the 0-based index of an earlier block, or a callable."""

    thought_instruction: str
    source: Selector = "input"

    def select(self, state: ChainState) -> str:
        if callable(self.source):
            return self.source(state)
        if self.source == "input":
            return state.input
        if isinstance(self.source, int) and 0 <= self.source < len(state.outputs):
            return state.outputs[self.source]
        raise ValueError(f"block input selector {self.source!r} does not name the input or an earlier block")


@dataclass
class ChainResult:
    outputs: list[Completion]
    traces: list[RaTTrace]
    transcript: Transcript

    @property
    def final(self) -> Completion:
        return self.outputs[-1]


@dataclass(frozen=True)
class Chain:
    blocks: tuple[RatBlock, ...]
    refine: str | None = None

    def run(
        self,
        provider: Provider,
        input: str,
        params: GenerationParams = GenerationParams(),
        transcript: Transcript | None = None,
    ) -> ChainResult:
        transcript = transcript if transcript is not None else Transcript()
        state = ChainState(input)
        outputs: list[Completion] = []
        traces: list[RaTTrace] = []
        for i, block in enumerate(self.blocks, 1):
            try:
                completion, trace = run_rat(
                    provider, block.select(state), block.thought_instruction, params, transcript, self.refine, f"block{i}"
                )
            except (RefineFailed, ThoughtFailed, ValueError) as exc:
                raise ChainBlockFailed(i, exc, traces) from exc
            outputs.append(completion)
            traces.append(trace)
            state.outputs.append(completion.text)
        return ChainResult(outputs, traces, transcript)


def compose_rat_chain(
    blocks: Iterable[RatBlock | tuple[Selector, str]], refine: str | None = None
) -> Chain:
    """Concatenate RaT blocks. Tuples are read as ``(input_selector, thought_instruction)``."""
    built = tuple(b if isinstance(b, RatBlock) else RatBlock(b[1], b[0]) for b in blocks)
    if not built:
        raise ValueError("a chain needs at least one block")
    return Chain(built, refine)


def with_seed(params: GenerationParams, seed: int | None) -> GenerationParams:
    return replace(params, seed=seed)
