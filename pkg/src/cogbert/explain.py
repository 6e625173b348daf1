"""Two explanation pipelines and their agreement measure.

Incoming-attention accumulation sums every head's attention probabilities
over all layers and source rows, yielding one score per token; PAD rows and
columns are excluded, CLS/SEP participate in accumulation but never in
keyword ranking. The LIME-style explainer perturbs a sentence by randomly
removing words, weights each perturbation by an exponential kernel over the
cosine distance from the full sentence, and fits a weighted ridge surrogate
whose coefficients score the words.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ValidationError
from .model import AttentionTrace
from .numerics.rng import SeededRng
from .tokenizer import TokenizedSentence

log = logging.getLogger(__name__)

DEFAULT_SAMPLES = 200
DEFAULT_KERNEL_WIDTH = 25.0
DEFAULT_RIDGE_LAMBDA = 1e-3
DISTANCE_SCALE = 100.0  # cosine distances are scaled to percent before the kernel


@dataclass
class TokenScore:
    position: int  # position in the tokenized layout (CLS=0, words from 1)
    word: str
    score: float


def accumulate_attention(
    trace: AttentionTrace, layout: TokenizedSentence, words: Sequence[str]
) -> list[TokenScore]:
    """Incoming attention per token: sum over layers, heads, and source rows.

    Restricted to real rows and columns (PAD excluded); includes CLS and SEP
    entries so the scores account for all real attention mass.
    """
    if len(words) != layout.word_count:
        raise ValidationError(
            f"got {len(words)} words for a layout with {layout.word_count} content tokens"
        )
    real = np.asarray(layout.real_positions())
    incoming = trace.probs[:, :, real][:, :, :, real].sum(axis=(0, 1, 2))
    labels = ["[CLS]", *words, "[SEP]"]
    return [
        TokenScore(position=int(pos), word=labels[j], score=float(incoming[j]))
        for j, pos in enumerate(real)
    ]


def top_k(scores: list[TokenScore], k: int, layout: TokenizedSentence) -> list[str]:
    """Words at the k highest-scoring content positions, earlier position wins ties."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    content = set(layout.content_positions())
    candidates = [s for s in scores if s.position in content]
    if k > len(candidates):
        log.warning("top_k: asked for %d keywords but only %d content tokens", k, len(candidates))
    candidates.sort(key=lambda s: (-s.score, s.position))
    return [s.word for s in candidates[:k]]


def _cosine_distance_from_full(mask: np.ndarray) -> float:
    """Cosine distance between a keep-mask and the all-ones vector."""
    kept = mask.sum()
    if kept == 0:
        return 1.0
    return 1.0 - math.sqrt(kept / mask.size)


def lime_explain(
    predict_fn: Callable[[list[str], np.ndarray], float],
    words: Sequence[str],
    n_samples: int = DEFAULT_SAMPLES,
    kernel_width: float = DEFAULT_KERNEL_WIDTH,
    ridge_lambda: float = DEFAULT_RIDGE_LAMBDA,
    seed: int = 0,
) -> list[TokenScore]:
    """Per-word surrogate coefficients for predict_fn around this sentence.

    predict_fn receives the perturbed word list plus its boolean keep-mask
    (callers holding word-aligned features need the indices, not just the
    words) and returns the probability of the class being explained. Each
    word is kept independently with p=0.5; all-removed draws are redrawn.
    Sample weight = exp(-(100 * D)^2 / width^2) with D the cosine distance
    between the keep-mask and the full sentence.
    """
    words = list(words)
    if not words:
        raise ValidationError("cannot explain an empty sentence")
    if n_samples < 10:
        raise ValidationError("need at least 10 perturbation samples")
    n = len(words)
    rng = SeededRng(seed).derive("lime")

    masks = np.zeros((n_samples, n), dtype=np.float64)
    for s in range(n_samples):
        mask = (rng.random(n) < 0.5).astype(np.float64)
        while not mask.any():
            mask = (rng.random(n) < 0.5).astype(np.float64)
        masks[s] = mask

    targets = np.array([
        predict_fn([w for w, keep in zip(words, mask) if keep], mask.astype(bool))
        for mask in masks
    ])
    distances = np.array([_cosine_distance_from_full(mask) for mask in masks])
    weights = np.exp(-((DISTANCE_SCALE * distances) ** 2) / kernel_width**2)
    coefs = weighted_ridge(masks, targets, weights, ridge_lambda)
    return [
        TokenScore(position=i + 1, word=w, score=float(c))
        for i, (w, c) in enumerate(zip(words, coefs))
    ]


def weighted_ridge(masks: np.ndarray, targets: np.ndarray, weights: np.ndarray,
                   ridge_lambda: float) -> np.ndarray:
    """Weight-normalized ridge fit of targets on presence indicators.

    Weights are normalized to sum to 1 so the fit is invariant under sample
    replication; the intercept column is unpenalized. Returns the per-word
    coefficients (intercept dropped).
    """
    n_samples, n = masks.shape
    norm = weights / weights.sum()
    design = np.hstack([np.ones((n_samples, 1)), masks])
    wx = design * norm[:, None]
    gram = design.T @ wx
    penalty = np.eye(n + 1) * ridge_lambda
    penalty[0, 0] = 0.0
    rhs = wx.T @ targets
    try:
        return np.linalg.solve(gram + penalty, rhs)[1:]
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"singular surrogate system: {exc}") from exc


def correlate(keywords_a: Sequence[str], keywords_b: Sequence[str], k: int) -> float:
    """Fraction of the k slots shared by the two keyword sets."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    return len(set(keywords_a) & set(keywords_b)) / k


@dataclass
class ExplanationReport:
    """Both explainers' scores for one sentence plus their top-k agreement."""

    sentence_id: str
    predicted_class: int
    attention_scores: list[TokenScore]
    lime_scores: list[TokenScore]
    attention_top: list[str]
    lime_top: list[str]
    k: int
    overlap: float

    def to_dict(self) -> dict:
        def scores(items: list[TokenScore]) -> list[dict]:
            return [{"position": s.position, "word": s.word, "score": s.score} for s in items]

        return {
            "sentence_id": self.sentence_id,
            "predicted_class": self.predicted_class,
            "attention_scores": scores(self.attention_scores),
            "lime_scores": scores(self.lime_scores),
            "attention_top": self.attention_top,
            "lime_top": self.lime_top,
            "k": self.k,
            "overlap": self.overlap,
        }

    def heatmap_rows(self) -> list[tuple[str, float, float]]:
        """(word, attention score, lime weight) per content word, in order."""
        lime_by_pos = {s.position: s.score for s in self.lime_scores}
        return [
            (s.word, s.score, lime_by_pos.get(s.position, 0.0))
            for s in self.attention_scores
            if s.position in lime_by_pos
        ]


def build_report(
    sentence_id: str,
    predicted_class: int,
    attention_scores: list[TokenScore],
    lime_scores: list[TokenScore],
    layout: TokenizedSentence,
    k: int = 5,
) -> ExplanationReport:
    attention_top = top_k(attention_scores, k, layout)
    lime_top = top_k(lime_scores, k, layout)
    return ExplanationReport(
        sentence_id=sentence_id,
        predicted_class=predicted_class,
        attention_scores=attention_scores,
        lime_scores=lime_scores,
        attention_top=attention_top,
        lime_top=lime_top,
        k=k,
        overlap=correlate(attention_top, lime_top, k),
    )
