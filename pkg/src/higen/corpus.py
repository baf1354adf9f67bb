"""Document ingestion, normalization, and sentence segmentation.

Documents are normalized once; every sentence records a character span into
the normalized text so downstream consumers (ranking, ablation, prompting)
can address source sentences by index without re-tokenizing.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, DatasetError

_RESOURCE_DIR = Path(__file__).parent / "resources"

# Control characters stripped during normalization (newline and tab survive).
_CONTROL_RE = re.compile(r"[\x00-\x08\x0b\x0c\x0e-\x1f\x7f-\x9f]")

# Transcript turn label: "Project Manager: ...", "Grad A: ...".
_SPEAKER_RE = re.compile(r"^([A-Za-z][\w .'\-]{0,63}?)\s*:\s?(.*)$")

# Fence line separating the query prefix from the transcript body.
_DELIMITER_RE = re.compile(r"^={4,}\s*$")

_TERMINALS = ".!?"

SCHEMAS = ("scrolls_govreport", "scrolls_qmsum", "generic_jsonl")


def _load_abbreviations() -> frozenset[str]:
    entries = []
    for line in (_RESOURCE_DIR / "abbreviations.txt").read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            entries.append(line)
    return frozenset(entries)


ABBREVIATIONS = _load_abbreviations()


@dataclass(frozen=True)
class Sentence:
    """One source sentence: 0-based index, text, and span into the normalized document."""

    index: int
    text: str
    span: tuple[int, int]
    speaker: str | None = None


@dataclass
class Document:
    id: str
    raw_text: str
    normalized_text: str
    sentences: list[Sentence]
    query: str | None = None
    reference_summary: str | None = None
    kind: str = "prose"
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.id:
            raise DatasetError("document id must be non-empty")


def normalize_text(raw: str) -> str:
    """Canonicalize newlines and strip control characters other than newline/tab."""
    text = raw.replace("\r\n", "\n").replace("\r", "\n")
    return _CONTROL_RE.sub("", text)


def _is_protected(text: str, dot_pos: int) -> bool:
    """True when the period at dot_pos ends a known abbreviation token."""
    start = dot_pos
    while start > 0 and not text[start - 1].isspace():
        start -= 1
    token = text[start : dot_pos + 1].lstrip("([{\"'")
    return token in ABBREVIATIONS


def _prose_spans(text: str, offset: int = 0) -> list[tuple[int, int]]:
    """Sentence spans for prose: split after a terminal run followed by
    whitespace and an uppercase/digit start, unless an abbreviation protects it."""
    spans: list[tuple[int, int]] = []
    n = len(text)
    start = 0
    i = 0
    while i < n:
        if text[i] in _TERMINALS:
            j = i
            while j + 1 < n and text[j + 1] in _TERMINALS:
                j += 1
            k = j + 1
            if k < n and text[k].isspace():
                t = k
                while t < n and text[t].isspace():
                    t += 1
                next_starts = t < n and (text[t].isupper() or text[t].isdigit())
                protected = i == j and text[i] == "." and _is_protected(text, i)
                if next_starts and not protected:
                    spans.append((start, j + 1))
                    start = t
                    i = t
                    continue
            i = j + 1
        else:
            i += 1
    if start < n:
        spans.append((start, n))
    return [(s + offset, e + offset) for s, e in _trim_spans(text, spans)]


def _trim_spans(text: str, spans: list[tuple[int, int]]) -> list[tuple[int, int]]:
    out = []
    for s, e in spans:
        while s < e and text[s].isspace():
            s += 1
        while e > s and text[e - 1].isspace():
            e -= 1
        if e > s:
            out.append((s, e))
    return out


def _transcript_turns(text: str) -> list[tuple[str, int, int]]:
    """Split transcript text into (speaker, start, end) turn regions.

    A turn begins at a line matching ``Speaker: utterance`` and extends until
    the next such line. Fence lines are skipped. Text before the first speaker
    line is attributed to the speaker "unknown".
    """
    turns: list[tuple[str, int, int]] = []
    speaker = "unknown"
    region_start: int | None = None
    pos = 0
    for line in text.split("\n"):
        line_start, line_end = pos, pos + len(line)
        pos = line_end + 1
        if _DELIMITER_RE.match(line):
            if region_start is not None:
                turns.append((speaker, region_start, line_start))
                region_start = None
            continue
        match = _SPEAKER_RE.match(line)
        if match:
            if region_start is not None:
                turns.append((speaker, region_start, line_start))
            speaker = match.group(1).strip()
            region_start = line_start + match.start(2)
        elif region_start is None and line.strip():
            region_start = line_start
    if region_start is not None:
        turns.append((speaker, region_start, len(text)))
    return turns


def segment_sentences(text: str, kind: str = "prose") -> list[Sentence]:
    """Segment normalized text into sentences.

    Prose mode splits on sentence-final punctuation protected by the
    abbreviation list; transcript mode first splits on speaker turns and then
    applies the prose rule within each utterance.
    """
    if kind not in ("prose", "transcript"):
        raise ValueError(f"unknown document kind: {kind!r}")
    sentences: list[Sentence] = []
    if kind == "prose":
        for s, e in _prose_spans(text):
            sentences.append(Sentence(len(sentences), text[s:e], (s, e)))
    else:
        for speaker, start, end in _transcript_turns(text):
            for s, e in _prose_spans(text[start:end], offset=start):
                sentences.append(Sentence(len(sentences), text[s:e], (s, e), speaker=speaker))
    return sentences


def make_document(
    doc_id: str,
    raw_text: str,
    kind: str = "prose",
    query: str | None = None,
    reference_summary: str | None = None,
) -> Document:
    """Normalize, segment, and flag a document in one step."""
    normalized = normalize_text(raw_text)
    sentences = segment_sentences(normalized, kind)
    flags = ("short_document",) if len(sentences) < 2 else ()
    return Document(
        id=doc_id,
        raw_text=raw_text,
        normalized_text=normalized,
        sentences=sentences,
        query=query,
        reference_summary=reference_summary,
        kind=kind,
        flags=flags,
    )


def _split_query_prefix(text: str) -> tuple[str | None, str]:
    """Separate a QMSum-style query prefix from the transcript body."""
    lines = text.split("\n")
    for i, line in enumerate(lines):
        if _DELIMITER_RE.match(line):
            query = "\n".join(lines[:i]).strip()
            body = "\n".join(lines[i + 1 :])
            return (query or None), body
    return None, text


def _require(obj: dict, name: str, path: str, lineno: int) -> object:
    if name not in obj:
        raise DatasetError(f"{path}:{lineno}: missing required field {name!r}")
    return obj[name]


def load_dataset(
    path: str | Path,
    schema: str,
    limit: int | None = None,
    field_map: dict[str, str] | None = None,
) -> list[Document]:
    """Load a JSONL dataset file into Documents.

    ``scrolls_govreport`` maps {id, input, output} to prose documents;
    ``scrolls_qmsum`` additionally splits the query prefix and marks the
    document as a transcript; ``generic_jsonl`` uses a caller-supplied
    field map {id_field, input_field, output_field, query_field?}.
    """
    if schema not in SCHEMAS:
        raise ConfigError(f"unknown dataset schema: {schema!r}")
    if limit is not None and limit < 0:
        raise ConfigError("dataset limit must be >= 0")
    if schema == "generic_jsonl":
        if not field_map:
            raise ConfigError("generic_jsonl requires a field_map")
        for key in ("id_field", "input_field", "output_field"):
            if key not in field_map:
                raise ConfigError(f"generic_jsonl field_map missing {key!r}")

    path = Path(path)
    docs: list[Document] = []
    seen_ids: set[str] = set()
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if limit is not None and len(docs) >= limit:
                break
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed JSON line: {exc}") from exc
            if not isinstance(obj, dict):
                raise DatasetError(f"{path}:{lineno}: expected a JSON object")

            if schema == "scrolls_govreport":
                doc_id = str(_require(obj, "id", str(path), lineno))
                doc = make_document(
                    doc_id,
                    str(_require(obj, "input", str(path), lineno)),
                    kind="prose",
                    reference_summary=str(_require(obj, "output", str(path), lineno)),
                )
            elif schema == "scrolls_qmsum":
                doc_id = str(_require(obj, "id", str(path), lineno))
                raw = str(_require(obj, "input", str(path), lineno))
                query, body = _split_query_prefix(raw)
                doc = make_document(
                    doc_id,
                    body,
                    kind="transcript",
                    query=query,
                    reference_summary=str(_require(obj, "output", str(path), lineno)),
                )
                doc.raw_text = raw
            else:
                assert field_map is not None
                doc_id = str(_require(obj, field_map["id_field"], str(path), lineno))
                query_field = field_map.get("query_field")
                doc = make_document(
                    doc_id,
                    str(_require(obj, field_map["input_field"], str(path), lineno)),
                    kind="prose",
                    query=str(obj[query_field]) if query_field and obj.get(query_field) else None,
                    reference_summary=str(_require(obj, field_map["output_field"], str(path), lineno)),
                )

            if doc.id in seen_ids:
                raise DatasetError(f"{path}:{lineno}: duplicate document id {doc.id!r}")
            seen_ids.add(doc.id)
            docs.append(doc)
    return docs
