"""Perturbation-based context attribution.

Source sentences are ablated under random Bernoulli masks, a fixed response
is re-scored under each ablated context, the resulting log-probabilities are
mapped to logits, and a sparse linear surrogate fit by coordinate-descent
LASSO assigns each sentence an influence weight. Strictly positive weights
rank the sentences that form the content plan.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Document
from .errors import AttributionError, DomainError, HigenError
from .llm_client import LLMClient, ScoreRequest
from .prompts import Highlight, HighlightSet


@dataclass(frozen=True)
class AttributionParams:
    m: int = 64
    keep_prob: float = 0.5
    lambda_frac: float = 0.01


@dataclass(frozen=True)
class AblationMask:
    bits: tuple[int, ...]

    def __post_init__(self) -> None:
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError("mask bits must be 0 or 1")


@dataclass
class AttributionResult:
    scores: list[float]
    intercept: float
    lambda_: float
    num_ablations: int
    r_squared: float
    seed: int


def sample_masks(n: int, m: int, keep_prob: float, seed: int) -> list[AblationMask]:
    """m ablation masks over n sentences: the first is all-ones (anchoring the
    unablated context), the rest are i.i.d. Bernoulli(keep_prob) per bit with
    all-zero draws resampled."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if m < 2:
        raise ValueError("m must be >= 2")
    if not 0 < keep_prob < 1:
        raise ValueError("keep_prob must be in (0, 1)")
    rng = np.random.default_rng(seed)
    masks = [AblationMask(bits=(1,) * n)]
    while len(masks) < m:
        bits = (rng.random(n) < keep_prob).astype(int)
        if bits.any():
            masks.append(AblationMask(bits=tuple(int(b) for b in bits)))
    return masks


def ablate(document: Document, mask: AblationMask) -> str:
    """Concatenate kept sentences in document order, single-space separated;
    transcript sentences keep their speaker prefix."""
    if len(mask.bits) != len(document.sentences):
        raise ValueError("mask length must equal the document sentence count")
    parts = []
    for sentence, bit in zip(document.sentences, mask.bits):
        if bit:
            if sentence.speaker:
                parts.append(f"{sentence.speaker}: {sentence.text}")
            else:
                parts.append(sentence.text)
    return " ".join(parts)


def logit_scale(total_logprob: float) -> float:
    """Map log p to log(p / (1 - p)) stably in log space.

    For L = log p the result is L - log1mexp(L) where log1mexp uses the
    expm1 branch above -ln 2 and the log1p branch below it. L = 0 (a
    probability-1 continuation) has no finite logit and is rejected.
    """
    if not total_logprob <= 0.0:
        raise DomainError(f"total_logprob must be <= 0, got {total_logprob}")
    if total_logprob == 0.0:
        raise DomainError("total_logprob = 0 maps to an infinite logit")
    if total_logprob > -math.log(2.0):
        log1mexp = math.log(-math.expm1(total_logprob))
    else:
        log1mexp = math.log1p(-math.exp(total_logprob))
    return total_logprob - log1mexp


def _soft_threshold(value: float, lam: float) -> float:
    if value > lam:
        return value - lam
    if value < -lam:
        return value + lam
    return 0.0


def lambda_max(X: np.ndarray, y: np.ndarray) -> float:
    """Smallest penalty shrinking every weight to zero: max |X~^T (y - mean y)| / m
    over centered columns."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    centered = X - X.mean(axis=0)
    return float(np.abs(centered.T @ (y - y.mean())).max() / X.shape[0])


def fit_lasso(
    X: np.ndarray,
    y: np.ndarray,
    lam: float,
    tol: float = 1e-9,
    max_sweeps: int = 10_000,
) -> tuple[np.ndarray, float, float]:
    """Minimize (1/2m)||y - b - Xw||^2 + lam*||w||_1 by cyclic coordinate
    descent with soft thresholding; the intercept is unpenalized.

    Returns (weights, intercept, r_squared on the training data). Constant
    columns keep weight 0.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("non-finite values in LASSO input")
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be (m, n) and y length m")
    m, n = X.shape
    if m < 2:
        raise ValueError("need at least 2 samples")
    if lam < 0:
        raise ValueError("lambda must be >= 0")

    col_sq = (X * X).sum(axis=0) / m
    constant = X.max(axis=0) == X.min(axis=0)
    w = np.zeros(n)
    b = float(y.mean())
    residual = y - b
    for _ in range(max_sweeps):
        delta = 0.0
        for j in range(n):
            if constant[j] or col_sq[j] == 0.0:
                continue
            rho = float(X[:, j] @ residual) / m + col_sq[j] * w[j]
            updated = _soft_threshold(rho, lam) / col_sq[j]
            if updated != w[j]:
                residual -= (updated - w[j]) * X[:, j]
                delta = max(delta, abs(updated - w[j]))
                w[j] = updated
        shift = float(residual.mean())
        if shift != 0.0:
            b += shift
            residual -= shift
            delta = max(delta, abs(shift))
        if delta < tol:
            break

    sst = float(((y - y.mean()) ** 2).sum())
    ssr = float((residual**2).sum())
    r_squared = 1.0 if sst == 0.0 else 1.0 - ssr / sst
    return w, b, r_squared


def contextcite_attribute(
    client: LLMClient,
    document: Document,
    response: str,
    model: str,
    params: AttributionParams = AttributionParams(),
    seed: int = 0,
    dump_path: str | Path | None = None,
) -> AttributionResult:
    """Per-sentence influence weights for a fixed response.

    Each mask's ablated context is scored by the client (cache-eligible);
    logit-scaled totals are regressed on the mask bits with lambda =
    lambda_frac * lambda_max. Probability-1 samples are dropped; the fit
    requires more than n/2 + 2 surviving samples. With dump_path set, the
    (mask, logit) pairs are written as JSONL for offline refits.
    """
    if not response:
        raise ValueError("response must be non-empty")
    n = len(document.sentences)
    if n < 1:
        raise ValueError("document has no sentences")
    masks = sample_masks(n, params.m, params.keep_prob, seed)
    rows: list[tuple[int, ...]] = []
    targets: list[float] = []
    for index, mask in enumerate(masks):
        context = ablate(document, mask)
        try:
            scored = client.score_continuation(
                ScoreRequest(model=model, context=context, continuation=response),
                doc_id=document.id,
            )
        except HigenError as exc:
            raise AttributionError(f"scoring failed on ablation mask {index}: {exc}") from exc
        try:
            targets.append(logit_scale(scored.total_logprob))
        except DomainError:
            continue
        rows.append(mask.bits)
    if len(rows) < n / 2 + 2:
        raise AttributionError(
            f"only {len(rows)} of {params.m} ablation samples usable; need more than {n / 2 + 2:.0f}"
        )
    if dump_path is not None:
        with Path(dump_path).open("w", encoding="utf-8") as handle:
            for bits, logit in zip(rows, targets):
                handle.write(json.dumps({"mask": list(bits), "logit": logit}) + "\n")
    X = np.array(rows, dtype=float)
    y = np.array(targets, dtype=float)
    lam = params.lambda_frac * lambda_max(X, y)
    weights, intercept, r_squared = fit_lasso(X, y, lam)
    return AttributionResult(
        scores=[float(w) for w in weights],
        intercept=float(intercept),
        lambda_=float(lam),
        num_ablations=len(rows),
        r_squared=float(r_squared),
        seed=seed,
    )


def attribution_highlights(result: AttributionResult, document: Document, k: int) -> HighlightSet:
    """Top-k strictly positive attribution scores, re-ordered by document
    position. Zero positive scores yield an empty set."""
    if k < 1:
        raise ValueError("k must be >= 1")
    positives = [(i, s) for i, s in enumerate(result.scores) if s > 0]
    positives.sort(key=lambda pair: (-pair[1], pair[0]))
    chosen = sorted(i for i, _ in positives[: min(k, len(positives))])
    items = tuple(
        Highlight(text=document.sentences[i].text, source_index=i, alignment_score=1.0) for i in chosen
    )
    return HighlightSet(method="contextcite", items=items, k_requested=k)
