from __future__ import annotations

import json
from pathlib import Path

import pytest

from higen.corpus import Document, make_document
from higen.llm_client import LLMClient, MockBackend

DATA_DIR = Path(__file__).parent / "data"


def load_jsonl(name: str) -> list[dict]:
    rows = []
    for line in (DATA_DIR / name).read_text(encoding="utf-8").splitlines():
        if line.strip():
            rows.append(json.loads(line))
    return rows


def doc_from_sentences(sentences: list[str], doc_id: str = "doc") -> Document:
    return make_document(doc_id, " ".join(sentences))


@pytest.fixture
def three_sentence_doc() -> Document:
    return doc_from_sentences(
        ["Alpha opens the report.", "Bravo covers the middle.", "Charlie closes the report."]
    )


@pytest.fixture
def mock_client(tmp_path) -> LLMClient:
    return LLMClient(MockBackend(), cache_dir=tmp_path / "cache", concurrency=4)


def make_mock_client(tmp_path, backend=None, **kwargs) -> tuple[LLMClient, MockBackend]:
    backend = backend or MockBackend()
    client = LLMClient(backend, cache_dir=tmp_path / "cache", **kwargs)
    return client, backend
