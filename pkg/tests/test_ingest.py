import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geneus.errors import EmptyDocument, EncodingUnusable, InvalidChunkParams
from geneus.ingest import (
    ExtractedText,
    FormatHint,
    NoiseDecision,
    SourceDocument,
    chunk,
    extract_text,
    is_noise_char,
    noise_report,
    unchunk,
)


def extract(text, hint=FormatHint.PLAIN):
    return extract_text(SourceDocument.from_text(text, format_hint=hint))


def test_plain_text_passes_through():
    out = extract("Hello world")
    assert out == ExtractedText("Hello world", 0.0, 0)


def test_markdown_image_is_stripped():
    out = extract("See ![fig](f.png) here", FormatHint.MARKDOWN)
    assert out.text == "See  here"
    assert out.stripped_elements == 1


def test_links_keep_their_text_and_html_images_go():
    out = extract('Read [the guide](http://x/y) <img src="a.png"> now')
    assert out.text == "Read the guide  now"
    assert out.stripped_elements == 2


def test_fenced_blocks_are_removed():
    text = "Intro.\n```\nbox --> arrow\n```\nOutro."
    assert extract(text).text == "Intro.\nOutro."


def test_nested_link_in_image_text_reaches_fixpoint():
    out = extract("[![a](b)](c) end")
    assert "](" not in out.text
    assert out.text.strip() == "end"


def test_empty_document_rejected():
    with pytest.raises(EmptyDocument):
        extract_text(SourceDocument(b""))


def test_mostly_invalid_utf8_is_unusable():
    with pytest.raises(EncodingUnusable):
        extract_text(SourceDocument(b"\xff\xfe\xfa\xfb ok"))


def test_some_invalid_bytes_count_as_noise():
    out = extract_text(SourceDocument(b"abcdefgh\xff"))
    assert out.text == "abcdefgh"
    assert out.noise_ratio == pytest.approx(1 / 9)
    assert out.stripped_elements == 1


def test_control_characters_are_noise_but_whitespace_is_not():
    assert is_noise_char("\x07")
    assert is_noise_char("\u200b")  # zero-width space, category Cf
    assert is_noise_char("\ufffd")
    assert not any(is_noise_char(c) for c in "\n\r\t a")
    out = extract("a\x00b\x01c\nd")
    assert out.text == "abc\nd"
    assert out.noise_ratio == pytest.approx(2 / 7)


@pytest.mark.parametrize(
    "ratio, decision",
    [(0.0, NoiseDecision.CLEAN), (0.0199, NoiseDecision.CLEAN), (0.02, NoiseDecision.REFINABLE),
     (0.10, NoiseDecision.REFINABLE), (0.30, NoiseDecision.REFINABLE), (0.5, NoiseDecision.REJECT)],
)
def test_noise_thresholds(ratio, decision):
    assert noise_report(ExtractedText("x", ratio)) is decision


def test_format_hint_from_suffix(tmp_path):
    for name, hint in [("a.txt", FormatHint.PLAIN), ("b.md", FormatHint.MARKDOWN), ("c.rst", FormatHint.UNKNOWN)]:
        path = tmp_path / name
        path.write_text("text")
        doc = SourceDocument.from_path(path)
        assert doc.format_hint is hint and doc.name == name


def test_short_text_is_one_chunk():
    text = "x" * 100
    chunks = chunk(text, 256)
    assert len(chunks) == 1 and chunks[0].text == text and chunks[0].char_span == (0, 100)


def test_paragraph_boundaries_preferred():
    paras = [("Para %d sentence. " % i) * 12 for i in range(3)]
    paras = [p.strip() for p in paras]
    text = "\n\n".join(paras)
    assert 550 <= len(text) <= 650
    chunks = chunk(text, 300)
    assert len(chunks) == 3
    assert [c.text.rstrip("\n") for c in chunks] == paras
    assert "".join(c.text for c in chunks) == text


def test_sentence_then_whitespace_then_hard_cut():
    text = ("word " * 40 + "end. ") * 4
    for c in chunk(text, 256):
        assert len(c.text) <= 256
    hard = "y" * 700
    chunks = chunk(hard, 256)
    assert [len(c.text) for c in chunks] == [256, 256, 188]


def test_invalid_chunk_params():
    with pytest.raises(InvalidChunkParams):
        chunk("abc", 300, 300)
    with pytest.raises(InvalidChunkParams):
        chunk("abc", 300, -1)
    with pytest.raises(InvalidChunkParams):
        chunk("abc", 100)


def test_overlap_is_declared_in_spans():
    text = " ".join(f"w{i}" for i in range(400))
    chunks = chunk(text, 300, 50)
    for prev, nxt in zip(chunks, chunks[1:]):
        assert nxt.char_span[0] == prev.char_span[1] - 50
        assert prev.text[-50:] == nxt.text[:50]
    assert unchunk(chunks) == text


@settings(max_examples=150, deadline=None)
@given(st.text(alphabet=st.sampled_from("ab .\n!?"), min_size=0, max_size=2000),
       st.integers(256, 600), st.integers(0, 255))
def test_chunk_round_trip(text, max_chars, overlap):
    chunks = chunk(text, max_chars, overlap)
    assert all(len(c.text) <= max_chars for c in chunks)
    assert [c.index for c in chunks] == list(range(len(chunks)))
    assert unchunk(chunks) == text


@settings(max_examples=150, deadline=None)
@given(st.text(max_size=300))
def test_extraction_is_idempotent(text):
    if not text:
        return
    first = extract(text)
    if not first.text:
        return
    second = extract(first.text)
    assert second.text == first.text
    assert second.stripped_elements == 0


@settings(max_examples=100, deadline=None)
@given(st.text(min_size=1, max_size=200), st.integers(1, 20))
def test_noise_ratio_monotone_under_appended_noise(text, k):
    base = extract(text).noise_ratio
    assert extract(text + "\x01" * k).noise_ratio >= base
