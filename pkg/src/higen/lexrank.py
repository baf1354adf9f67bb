"""Unsupervised extractive highlighting by graph centrality.

Sentences become TF-IDF vectors, pairwise modified-cosine similarities form
a thresholded graph, and a damped power iteration over the degree-normalized
transition matrix yields a stationary saliency distribution. The top-k
sentences, re-ordered by document position, form the content plan.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Document, Sentence
from .metrics import tokenize
from .prompts import Highlight, HighlightSet

_RESOURCE_DIR = Path(__file__).parent / "resources"


def _load_stopwords() -> frozenset[str]:
    words = []
    for line in (_RESOURCE_DIR / "stopwords.txt").read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            words.append(line)
    return frozenset(words)


STOPWORDS = _load_stopwords()


@dataclass(frozen=True)
class LexRankParams:
    threshold: float = 0.1
    damping: float = 0.85
    tol: float = 1e-8
    max_iter: int = 200


@dataclass
class SimilarityGraph:
    n: int
    weights: np.ndarray
    threshold: float


@dataclass
class CentralityScores:
    scores: np.ndarray
    iterations: int
    converged: bool


def tfidf(sentences: list[Sentence]) -> list[dict[str, float]]:
    """Per-sentence sparse tf*idf vectors over sentences-as-documents.

    tf is the raw in-sentence count; idf = ln((n+1)/(df+1)) + 1. Stopwords
    are dropped before counting.
    """
    n = len(sentences)
    token_lists = [[t for t in tokenize(s.text) if t not in STOPWORDS] for s in sentences]
    df: dict[str, int] = {}
    for tokens in token_lists:
        for token in set(tokens):
            df[token] = df.get(token, 0) + 1
    idf = {token: math.log((n + 1) / (count + 1)) + 1.0 for token, count in df.items()}
    vectors: list[dict[str, float]] = []
    for tokens in token_lists:
        counts: dict[str, int] = {}
        for token in tokens:
            counts[token] = counts.get(token, 0) + 1
        vectors.append({token: count * idf[token] for token, count in counts.items()})
    return vectors


def modified_cosine(u: dict[str, float], v: dict[str, float]) -> float:
    """Cosine over tf*idf vectors (equivalently: sum tf_u*tf_v*idf^2 / norms)."""
    if not u or not v:
        return 0.0
    if len(v) < len(u):
        u, v = v, u
    dot = sum(weight * v[token] for token, weight in u.items() if token in v)
    if dot == 0.0:
        return 0.0
    norm_u = math.sqrt(sum(w * w for w in u.values()))
    norm_v = math.sqrt(sum(w * w for w in v.values()))
    return dot / (norm_u * norm_v)


def build_similarity_graph(sentences: list[Sentence], threshold: float = 0.1) -> SimilarityGraph:
    """Symmetric similarity matrix with unit diagonal; entries below the
    threshold are zeroed."""
    vectors = tfidf(sentences)
    n = len(sentences)
    weights = np.zeros((n, n))
    for i in range(n):
        weights[i, i] = 1.0
        for j in range(i + 1, n):
            sim = modified_cosine(vectors[i], vectors[j])
            weights[i, j] = sim
            weights[j, i] = sim
    weights[weights < threshold] = 0.0
    return SimilarityGraph(n=n, weights=weights, threshold=threshold)


def centrality(
    graph: SimilarityGraph,
    damping: float = 0.85,
    tol: float = 1e-8,
    max_iter: int = 200,
) -> CentralityScores:
    """Damped power iteration to the stationary distribution of the
    degree-normalized similarity graph (all-zero rows become uniform)."""
    if not 0 < damping < 1:
        raise ValueError("damping must be in (0, 1)")
    n = graph.n
    if n == 0:
        return CentralityScores(scores=np.zeros(0), iterations=0, converged=True)
    row_sums = graph.weights.sum(axis=1, keepdims=True)
    transition = np.where(row_sums > 0, graph.weights / np.where(row_sums == 0, 1.0, row_sums), 1.0 / n)
    p = np.full(n, 1.0 / n)
    teleport = (1.0 - damping) / n
    for iteration in range(1, max_iter + 1):
        p_next = damping * (transition.T @ p) + teleport
        if np.abs(p_next - p).sum() < tol:
            return CentralityScores(scores=p_next, iterations=iteration, converged=True)
        p = p_next
    return CentralityScores(scores=p, iterations=max_iter, converged=False)


def dump_similarity_csv(graph: SimilarityGraph, path: str | Path) -> None:
    """Debug dump of the (thresholded) similarity matrix."""
    lines = [",".join(f"{graph.weights[i, j]:.6f}" for j in range(graph.n)) for i in range(graph.n)]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def lexrank_highlights(document: Document, k: int, params: LexRankParams = LexRankParams()) -> HighlightSet:
    """Top-k central sentences as extracted highlights, in document order.

    Ties break toward the smaller sentence index.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n = len(document.sentences)
    if n == 0:
        return HighlightSet(method="lexrank", items=(), k_requested=k)
    graph = build_similarity_graph(document.sentences, threshold=params.threshold)
    result = centrality(graph, damping=params.damping, tol=params.tol, max_iter=params.max_iter)
    order = sorted(range(n), key=lambda i: (-result.scores[i], i))
    chosen = sorted(order[: min(k, n)])
    items = tuple(
        Highlight(text=document.sentences[i].text, source_index=i, alignment_score=1.0) for i in chosen
    )
    return HighlightSet(method="lexrank", items=items, k_requested=k)
