from __future__ import annotations


import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from higen.corpus import (
    load_dataset,
    make_document,
    normalize_text,
    segment_sentences,
)
from higen.errors import ConfigError, DatasetError

from conftest import DATA_DIR, load_jsonl


class TestNormalize:
    def test_crlf_collapsed(self):
        assert normalize_text("a\r\nb") == "a\nb"

    def test_empty(self):
        assert normalize_text("") == ""

    def test_control_chars_stripped(self):
        assert normalize_text("x\u0000y") == "xy"

    def test_tab_and_newline_survive(self):
        assert normalize_text("a\tb\nc") == "a\tb\nc"

    def test_lone_carriage_return(self):
        assert normalize_text("a\rb") == "a\nb"


class TestProseSegmentation:
    def test_empty_document(self):
        assert segment_sentences("") == []

    def test_single_sentence(self):
        [s] = segment_sentences("Hello world.")
        assert s.index == 0
        assert s.text == "Hello world."
        assert s.span == (0, 12)

    def test_fixture_corpus_exact(self):
        for case in load_jsonl("segmentation_cases.jsonl"):
            text = normalize_text(case["text"])
            got = [s.text for s in segment_sentences(text)]
            assert got == case["expected"], f"segmentation mismatch on {case['text']!r}"

    def test_spans_reference_source_text(self):
        text = normalize_text("Dr. Smith arrived. He left. The end came fast.")
        sentences = segment_sentences(text)
        for s in sentences:
            assert text[s.span[0] : s.span[1]] == s.text
        starts = [s.span[0] for s in sentences]
        assert starts == sorted(starts)
        for prev, cur in zip(sentences, sentences[1:]):
            assert prev.span[1] <= cur.span[0]

    def test_unterminated_text_is_one_sentence(self):
        [s] = segment_sentences("no punctuation at all")
        assert s.text == "no punctuation at all"


_WORDS = st.sampled_from(["alpha", "bravo", "delta", "report", "budget", "vote", "Falcon", "100"])


@st.composite
def prose_texts(draw):
    n_sentences = draw(st.integers(min_value=1, max_value=6))
    parts = []
    for _ in range(n_sentences):
        words = draw(st.lists(_WORDS, min_size=1, max_size=6))
        sentence = " ".join(words).capitalize() + draw(st.sampled_from([".", "!", "?"]))
        parts.append(sentence)
    return " ".join(parts)


class TestSegmentationProperties:
    @settings(max_examples=60, deadline=None)
    @given(prose_texts())
    def test_nonwhitespace_characters_preserved(self, text):
        sentences = segment_sentences(normalize_text(text))
        joined = "".join(s.text for s in sentences)
        assert "".join(joined.split()) == "".join(normalize_text(text).split())

    @settings(max_examples=60, deadline=None)
    @given(prose_texts())
    def test_rejoin_resegment_idempotent(self, text):
        first = segment_sentences(normalize_text(text))
        rejoined = " ".join(s.text for s in first)
        second = segment_sentences(normalize_text(rejoined))
        assert len(second) == len(first)


class TestTranscriptSegmentation:
    def test_speakers_assigned(self):
        text = normalize_text("Alice: The budget passed. We adjourned.\nBob: I object to that.")
        sentences = segment_sentences(text, kind="transcript")
        assert [s.text for s in sentences] == ["The budget passed.", "We adjourned.", "I object to that."]
        assert [s.speaker for s in sentences] == ["Alice", "Alice", "Bob"]

    def test_multiline_turn(self):
        text = normalize_text("Alice: First point here.\nStill her turn. Done now.\nBob: Reply.")
        sentences = segment_sentences(text, kind="transcript")
        assert [s.speaker for s in sentences] == ["Alice", "Alice", "Alice", "Bob"]

    def test_untagged_prefix_gets_unknown_speaker(self):
        sentences = segment_sentences("hello there\nBob: Reply.", kind="transcript")
        assert sentences[0].speaker == "unknown"
        assert sentences[-1].speaker == "Bob"

    def test_fence_lines_skipped(self):
        sentences = segment_sentences("==========\nBob: Reply.\n==========", kind="transcript")
        assert [s.text for s in sentences] == ["Reply."]

    def test_transcript_spans_valid(self):
        text = normalize_text("Alice: The budget passed. We adjourned.\nBob: I object.")
        for s in segment_sentences(text, kind="transcript"):
            assert text[s.span[0] : s.span[1]] == s.text


class TestMakeDocument:
    def test_short_document_flagged(self):
        doc = make_document("d", "Only one sentence here.")
        assert "short_document" in doc.flags

    def test_normal_document_unflagged(self):
        doc = make_document("d", "One. Two.")
        assert doc.flags == ()


class TestLoadDataset:
    def test_minimal_govreport_record(self, tmp_path):
        path = tmp_path / "one.jsonl"
        path.write_text('{"id":"d1","input":"A. B.","output":"A."}\n')
        [doc] = load_dataset(path, "scrolls_govreport")
        assert doc.id == "d1"
        assert len(doc.sentences) == 2
        assert doc.reference_summary == "A."
        assert doc.kind == "prose"

    def test_limit_zero(self, tmp_path):
        path = tmp_path / "one.jsonl"
        path.write_text('{"id":"d1","input":"A.","output":"A."}\n')
        assert load_dataset(path, "scrolls_govreport", limit=0) == []

    def test_limit_is_prefix(self):
        path = DATA_DIR / "minicorpus.jsonl"
        full = load_dataset(path, "scrolls_govreport")
        two = load_dataset(path, "scrolls_govreport", limit=2)
        assert [d.id for d in two] == [d.id for d in full][:2]

    def test_qmsum_record_query_and_speakers(self):
        [doc] = load_dataset(DATA_DIR / "qmsum_record.jsonl", "scrolls_qmsum")
        assert doc.query
        assert doc.kind == "transcript"
        assert doc.sentences
        assert all(s.speaker for s in doc.sentences)
        speakers = {s.speaker for s in doc.sentences}
        assert "Project Manager" in speakers
        assert "Marketing" in speakers

    def test_malformed_line_carries_line_number(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id":"d1","input":"A.","output":"A."}\nnot json\n')
        with pytest.raises(DatasetError, match=":2:"):
            load_dataset(path, "scrolls_govreport")

    def test_missing_field_named(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id":"d1","input":"A."}\n')
        with pytest.raises(DatasetError, match="'output'"):
            load_dataset(path, "scrolls_govreport")

    def test_duplicate_id_rejected(self, tmp_path):
        path = tmp_path / "dup.jsonl"
        path.write_text('{"id":"d","input":"A.","output":"A."}\n{"id":"d","input":"B.","output":"B."}\n')
        with pytest.raises(DatasetError, match="duplicate"):
            load_dataset(path, "scrolls_govreport")

    def test_generic_schema_needs_field_map(self, tmp_path):
        path = tmp_path / "g.jsonl"
        path.write_text('{"key":"d","text":"A.","summary":"A."}\n')
        with pytest.raises(ConfigError):
            load_dataset(path, "generic_jsonl")
        [doc] = load_dataset(
            path,
            "generic_jsonl",
            field_map={"id_field": "key", "input_field": "text", "output_field": "summary"},
        )
        assert doc.id == "d"
        assert doc.reference_summary == "A."

    def test_unknown_schema(self, tmp_path):
        path = tmp_path / "x.jsonl"
        path.write_text("{}\n")
        with pytest.raises(ConfigError):
            load_dataset(path, "bogus")
