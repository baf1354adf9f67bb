"""Prompt template rendering and structured-output parsing.

Templates live as resource files with named placeholders; model outputs
follow a fixed scaffold ("Key Sentences:" numbered list, then "Summary:")
that is parsed back with a line-oriented grammar. Generated highlight texts
are aligned to source sentences by token-level F1.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .corpus import Document
from .errors import ParseError, RenderError
from .metrics import tokenize

_TEMPLATE_DIR = Path(__file__).parent / "resources" / "templates"

TEMPLATE_IDS = (
    "direct_gov",
    "direct_qmsum",
    "e2e_gov",
    "e2e_qmsum",
    "stage1_highlights_gov",
    "stage1_highlights_qmsum",
    "stage2_summary_gov",
    "stage2_summary_qmsum",
)

# Only these names are placeholders; any other {...} in a body is literal text
# shown to the model (e.g. the "{Sentence Text}" slots of the scaffold).
_PLACEHOLDER_NAMES = ("document", "k", "query", "highlights", "summary_length_hint")
_PLACEHOLDER_RE = re.compile(r"\{(" + "|".join(_PLACEHOLDER_NAMES) + r")\}")

_ITEM_RE = re.compile(r"^\s*\d+[.)]\s+(.*)$")
_SUMMARY_MARKER_RE = re.compile(r"^[ \t]*[#*>`\"'\-]*[ \t]*summary[ \t]*:", re.IGNORECASE | re.MULTILINE)
_KEY_MARKER_RE = re.compile(r"^[ \t]*[#*>`\"'\-]*[ \t]*key sentences[ \t]*:", re.IGNORECASE | re.MULTILINE)
_THINK_RE = re.compile(r"\A\s*<think>.*?</think>", re.IGNORECASE | re.DOTALL)

# Appended once when a completion lacks the required scaffold.
FORMAT_REMINDER = (
    'Reminder: you must answer in the required structured format and include the literal '
    'marker "Summary:" followed by your generated summary.'
)


@dataclass(frozen=True)
class Highlight:
    """One content-plan item, optionally traced back to a source sentence."""

    text: str
    source_index: int | None = None
    alignment_score: float = 0.0


@dataclass(frozen=True)
class HighlightSet:
    """An ordered content plan of at most k_requested highlights."""

    method: str
    items: tuple[Highlight, ...]
    k_requested: int

    def texts(self) -> list[str]:
        return [h.text for h in self.items]


@dataclass(frozen=True)
class PlannedOutput:
    highlights: tuple[str, ...]
    summary: str
    raw: str


def load_template(template_id: str) -> str:
    if template_id not in TEMPLATE_IDS:
        raise RenderError(f"unknown template id: {template_id!r}")
    return (_TEMPLATE_DIR / f"{template_id}.txt").read_text(encoding="utf-8")


def format_highlights(highlights: list[Highlight] | tuple[Highlight, ...]) -> str:
    return "\n".join(f"{i + 1}. {h.text}" for i, h in enumerate(highlights))


def render(
    template_id: str,
    document: Document,
    k: int | None = None,
    highlights: list[Highlight] | tuple[Highlight, ...] | None = None,
) -> str:
    """Fill a template with the document and, where required, k and the highlights."""
    body = load_template(template_id)
    values: dict[str, str] = {"document": document.normalized_text}
    if k is not None:
        values["k"] = str(int(k))
    if document.query is not None:
        values["query"] = document.query
    if highlights is not None:
        values["highlights"] = format_highlights(highlights)

    missing: list[str] = []

    def _fill(match: re.Match) -> str:
        name = match.group(1)
        if name not in values:
            missing.append(name)
            return match.group(0)
        return values[name]

    rendered = _PLACEHOLDER_RE.sub(_fill, body)
    if missing:
        raise RenderError(f"template {template_id!r} is missing placeholder value(s): {sorted(set(missing))}")
    return rendered.rstrip("\n")


def _strip_think_block(raw: str) -> str:
    return _THINK_RE.sub("", raw, count=1)


def parse_highlights(raw: str) -> list[str]:
    """Numbered items between the "Key Sentences:" marker and the "Summary:"
    marker (or end of text). Numbering gaps are tolerated; order is preserved."""
    text = _strip_think_block(raw)
    key = _KEY_MARKER_RE.search(text)
    start = key.end() if key else 0
    summary = _SUMMARY_MARKER_RE.search(text, start)
    end = summary.start() if summary else len(text)
    items = []
    for line in text[start:end].splitlines():
        match = _ITEM_RE.match(line)
        if match:
            item = match.group(1).rstrip()
            if item:
                items.append(item)
    return items


def parse_planned(raw: str) -> PlannedOutput:
    """Split a structured completion into its highlight list and summary.

    The summary is everything after the last "Summary:" marker at a line
    start (leading markdown symbols tolerated); a leading think-tag block is
    stripped before parsing.
    """
    text = _strip_think_block(raw)
    matches = list(_SUMMARY_MARKER_RE.finditer(text))
    if not matches:
        raise ParseError('no "Summary:" marker found in model output')
    marker = matches[-1]
    tail = text[marker.end() :]
    # a stray scaffold block after the summary is never part of the summary
    stray = _KEY_MARKER_RE.search(tail)
    if stray:
        tail = tail[: stray.start()]
    summary = tail.strip()
    if not summary:
        raise ParseError('empty summary after "Summary:" marker')

    highlights: list[str] = []
    key = _KEY_MARKER_RE.search(text)
    if key and key.start() < marker.start():
        for line in text[key.end() : marker.start()].splitlines():
            match = _ITEM_RE.match(line)
            if match:
                item = match.group(1).rstrip()
                if item:
                    highlights.append(item)
    return PlannedOutput(highlights=tuple(highlights), summary=summary, raw=raw)


def _token_f1(a: list[str], b: list[str]) -> float:
    if not a or not b:
        return 0.0
    common = sum((Counter(a) & Counter(b)).values())
    if common == 0:
        return 0.0
    precision = common / len(a)
    recall = common / len(b)
    return 2 * precision * recall / (precision + recall)


def align(document: Document, texts: list[str], threshold: float = 0.6) -> list[Highlight]:
    """Match each text to the source sentence maximizing token-level F1.

    The source index is recorded only when the best F1 reaches the threshold;
    the score is kept either way. Ties go to the smaller sentence index.
    """
    if not 0 < threshold <= 1:
        raise ValueError("threshold must be in (0, 1]")
    sentence_tokens = [tokenize(s.text) for s in document.sentences]
    out: list[Highlight] = []
    for text in texts:
        tokens = tokenize(text)
        best_score = 0.0
        best_index: int | None = None
        for i, stoks in enumerate(sentence_tokens):
            score = _token_f1(tokens, stoks)
            if score > best_score:
                best_score = score
                best_index = i
        if best_score >= threshold and best_index is not None:
            out.append(Highlight(text=text, source_index=best_index, alignment_score=best_score))
        else:
            out.append(Highlight(text=text, source_index=None, alignment_score=best_score))
    return out
