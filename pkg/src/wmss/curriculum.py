"""Entropy-dynamics curriculum: per-sample weights from a weak/strong pair."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .logit_math import InvalidInputError
from .toy_lm import ModelParams, TokenSequence, corpus_entropies

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EntropyRecord:
    sample_id: int
    h_weak: float
    h_strong: float
    delta_h: float


@dataclass(frozen=True)
class CurriculumConfig:
    alpha: float = 0.1
    beta: float = 0.8
    gamma: float = 0.1

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise InvalidInputError("curriculum coefficients must be non-negative")
        if self.alpha + self.beta + self.gamma <= 0:
            raise InvalidInputError("curriculum coefficients must not all be zero")


@dataclass(frozen=True)
class CurriculumWeights:
    probs: np.ndarray
    fallback: bool = False  # True when every signal vanished and weights are uniform


def entropy_dynamics(weak: ModelParams, strong: ModelParams, corpus: list[TokenSequence]) -> list[EntropyRecord]:
    if weak.dims != strong.dims:
        raise InvalidInputError(f"weak {weak.dims} and strong {strong.dims} models differ")
    vocab = weak.dims.vocab
    if any(max(s.tokens) >= vocab for s in corpus):
        raise InvalidInputError(f"corpus contains tokens outside vocabulary of size {vocab}")
    hw = corpus_entropies(weak, corpus)
    hs = corpus_entropies(strong, corpus)
    return [EntropyRecord(s.sample_id, float(a), float(b), float(b - a)) for s, a, b in zip(corpus, hw, hs)]


def curriculum_weights(records: list[EntropyRecord], cfg: CurriculumConfig = CurriculumConfig()) -> CurriculumWeights:
    """Convex mix of three separately normalised signals.

    Terms are historical difficulty h_weak, consolidation [-dH]_+ and
    regression repair [dH]_+.  A term whose total is zero is dropped and the
    remaining coefficients renormalised; if nothing survives, uniform.
    """
    if not records:
        raise InvalidInputError("need at least one entropy record")
    hw = np.array([r.h_weak for r in records], dtype=np.float64)
    dh = np.array([r.delta_h for r in records], dtype=np.float64)
    terms = [(cfg.alpha, hw), (cfg.beta, np.maximum(-dh, 0.0)), (cfg.gamma, np.maximum(dh, 0.0))]
    live = [(c, v / v.sum()) for c, v in terms if c > 0 and v.sum() > 0]
    total = sum(c for c, _ in live)
    n = len(records)
    if total <= 0:
        log.info("all curriculum signals are zero; falling back to uniform weights")
        return CurriculumWeights(np.full(n, 1.0 / n), fallback=True)
    p = sum((c / total) * v for c, v in live)
    return CurriculumWeights(p / p.sum())


def weighted_sample(corpus: list[TokenSequence], weights: CurriculumWeights, n: int | None = None, seed: int = 0):
    """Multinomial draw with replacement; defaults to |corpus| draws."""
    probs = np.asarray(weights.probs)
    if probs.shape[0] != len(corpus):
        raise InvalidInputError(f"{probs.shape[0]} weights for a corpus of {len(corpus)}")
    n = len(corpus) if n is None else n
    if n < 1:
        raise InvalidInputError("must draw at least one sample")
    idx = np.random.default_rng(seed).choice(len(corpus), size=n, replace=True, p=probs)
    return [corpus[i] for i in idx]


def export_records(path, records: list[EntropyRecord], weights: CurriculumWeights) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "h_weak", "h_strong", "delta_h", "weight"])
        for r, p in zip(records, weights.probs):
            w.writerow([r.sample_id, repr(r.h_weak), repr(r.h_strong), repr(r.delta_h), repr(float(p))])
