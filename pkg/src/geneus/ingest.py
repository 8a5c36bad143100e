"""Turn a requirements document into plain prompt-ready text.

Diagrams, screenshots and code listings survive plain-text extraction only as
junk characters, so markdown images, links, fenced blocks and control
characters are stripped here before anything reaches the model.
"""

from __future__ import annotations

import enum
import re
import unicodedata
from dataclasses import dataclass
from pathlib import Path

from .errors import EmptyDocument, EncodingUnusable, InvalidChunkParams

REPLACEMENT_CHAR = "�"
CLEAN_BELOW = 0.02
REJECT_ABOVE = 0.30
MIN_CHUNK_CHARS = 256

_KEEP_CONTROLS = frozenset("\n\r\t")
_NOISE_CATEGORIES = frozenset({"Cc", "Cf", "Co", "Cn", "Cs"})

_FENCE = re.compile(r"^[ \t]*(```|~~~)[^\n]*\n.*?^[ \t]*\1[ \t]*$\n?", re.MULTILINE | re.DOTALL)
_IMAGE = re.compile(r"!\[[^\[\]]*\]\([^()]*\)")
_HTML_IMG = re.compile(r"<img\b[^<>]*>", re.IGNORECASE)
_LINK = re.compile(r"\[([^\[\]]*)\]\([^()]*\)")


class FormatHint(str, enum.Enum):
    PLAIN = "plain"
    MARKDOWN = "markdown"
    UNKNOWN = "unknown"


_SUFFIX_HINTS = {".txt": FormatHint.PLAIN, ".md": FormatHint.MARKDOWN, ".markdown": FormatHint.MARKDOWN}


@dataclass(frozen=True)
class SourceDocument:
    data: bytes
    format_hint: FormatHint = FormatHint.UNKNOWN
    name: str = ""

    @classmethod
    def from_path(cls, path: str | Path) -> "SourceDocument":
        path = Path(path)
        hint = _SUFFIX_HINTS.get(path.suffix.lower(), FormatHint.UNKNOWN)
        return cls(path.read_bytes(), hint, path.name)

    @classmethod
    def from_text(cls, text: str, name: str = "", format_hint: FormatHint = FormatHint.PLAIN) -> "SourceDocument":
        return cls(text.encode("utf-8"), format_hint, name)


@dataclass(frozen=True)
class ExtractedText:
    text: str
    noise_ratio: float = 0.0
    stripped_elements: int = 0


@dataclass(frozen=True)
class TextChunk:
    index: int
    text: str
    char_span: tuple[int, int]


class NoiseDecision(str, enum.Enum):
    CLEAN = "clean"
    REFINABLE = "refinable"
    REJECT = "reject"


def is_noise_char(ch: str) -> bool:
    """Unrecognizable-symbol test: replacement chars and non-printables other than whitespace."""
    if ch == REPLACEMENT_CHAR:
        return True
    return ch not in _KEEP_CONTROLS and unicodedata.category(ch) in _NOISE_CATEGORIES


def _decode(data: bytes) -> str:
    # surrogateescape maps each undecodable byte to one lone surrogate, which lets us count them
    raw = data.decode("utf-8", errors="surrogateescape")
    bad = sum(1 for ch in raw if "\udc80" <= ch <= "\udcff")
    if bad * 2 > len(data):
        raise EncodingUnusable(f"{bad} of {len(data)} bytes are not valid UTF-8")
    if bad:
        raw = re.sub("[\udc80-\udcff]", REPLACEMENT_CHAR, raw)
    return raw


def _strip_markup(text: str) -> tuple[str, int]:
    removed = 0
    # removals can splice new constructs together ("[[a](b)](c)"), so loop to a fixpoint
    while True:
        before = removed
        text, n = _FENCE.subn("", text)
        removed += n
        text, n = _IMAGE.subn("", text)
        removed += n
        text, n = _HTML_IMG.subn("", text)
        removed += n
        text, n = _LINK.subn(r"\1", text)
        removed += n
        if removed == before:
            return text, removed


def extract_text(doc: SourceDocument) -> ExtractedText:
    if not doc.data:
        raise EmptyDocument(f"document {doc.name or '<unnamed>'} is empty")
    raw = _decode(doc.data)
    noisy = sum(1 for ch in raw if is_noise_char(ch))
    noise_ratio = noisy / len(raw) if raw else 0.0
    text = "".join(ch for ch in raw if not is_noise_char(ch))
    text, markup = _strip_markup(text)
    return ExtractedText(text=text, noise_ratio=noise_ratio, stripped_elements=noisy + markup)


def noise_report(text: ExtractedText) -> NoiseDecision:
    if text.noise_ratio < CLEAN_BELOW:
        return NoiseDecision.CLEAN
    if text.noise_ratio <= REJECT_ABOVE:
        return NoiseDecision.REFINABLE
    return NoiseDecision.REJECT


_PARAGRAPH_END = re.compile(r"\n[ \t]*\n\s*")
_SENTENCE_END = re.compile(r"[.!?][\"')\]]*\s+")
_WHITESPACE = re.compile(r"\s+")


def _last_boundary(pattern: re.Pattern[str], text: str, lo: int, hi: int) -> int | None:
    best = None
    for m in pattern.finditer(text, 0, hi):
        if lo < m.end() <= hi:
            best = m.end()
    return best


def chunk(text: ExtractedText | str, max_chars: int, overlap: int = 0) -> list[TextChunk]:
    """Split text into pieces of at most ``max_chars``.

    Each chunk after the first starts with the last ``overlap`` characters of
    its predecessor. Splits land on paragraph breaks when one fits, then on
    sentence ends, then on whitespace.
    """
    if overlap < 0 or overlap >= max_chars:
        raise InvalidChunkParams(f"overlap must be in [0, max_chars), got {overlap} with max_chars={max_chars}")
    if max_chars < MIN_CHUNK_CHARS:
        raise InvalidChunkParams(f"max_chars must be at least {MIN_CHUNK_CHARS}, got {max_chars}")
    body = text.text if isinstance(text, ExtractedText) else text
    n = len(body)
    chunks: list[TextChunk] = []
    start = 0
    while True:
        if n - start <= max_chars:
            chunks.append(TextChunk(len(chunks), body[start:], (start, n)))
            return chunks
        hi = start + max_chars
        # the split must leave the next chunk starting past this one's start
        lo = start + overlap
        end = None
        for pattern in (_PARAGRAPH_END, _SENTENCE_END, _WHITESPACE):
            end = _last_boundary(pattern, body, lo, hi)
            if end is not None:
                break
        if end is None:
            end = hi
        chunks.append(TextChunk(len(chunks), body[start:end], (start, end)))
        start = end - overlap


def unchunk(chunks: list[TextChunk]) -> str:
    """Inverse of :func:`chunk`: drop each declared overlap and concatenate."""
    parts: list[str] = []
    prev_end = None
    for c in sorted(chunks, key=lambda c: c.index):
        start, _ = c.char_span
        skip = 0 if prev_end is None else prev_end - start
        parts.append(c.text[skip:])
        prev_end = c.char_span[1]
    return "".join(parts)
