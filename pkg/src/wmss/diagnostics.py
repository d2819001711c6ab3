"""Logit-dynamics statistics over an evaluation corpus and their time series."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .logit_math import InvalidInputError, LogitStatsRecord
from .toy_lm import ModelParams, TokenSequence, forward, positions

SERIES_COLUMNS = (
    "iteration", "epoch", "z_target", "z_bg", "gap", "sigma",
    "mean", "std", "centered_norm", "max", "min", "l2", "entropy", "max_prob",
)


@dataclass(frozen=True)
class GapRecord:
    z_target: float
    z_bg: float
    gap: float
    sigma: float
    n_positions: int


def _select(corpus: list[TokenSequence], n_samples: int | None, seed: int) -> list[TokenSequence]:
    if not corpus:
        raise InvalidInputError("evaluation corpus is empty")
    if n_samples is None:
        return list(corpus)
    if n_samples < 1:
        raise InvalidInputError("n_samples must be >= 1")
    idx = np.random.default_rng(seed).integers(0, len(corpus), size=n_samples)
    return [corpus[i] for i in idx]


def eval_logits(model: ModelParams, corpus: list[TokenSequence], n_samples: int | None = None, seed: int = 0):
    """Logits and targets for every next-token position of the selected samples."""
    ctx, tgt, _ = positions(_select(corpus, n_samples, seed), model.dims.window)
    logits, _ = forward(model, ctx)
    return logits, tgt


def gap_from_logits(logits: np.ndarray, targets: np.ndarray, top_k: int | None = None) -> GapRecord:
    """Target/background logit means.

    By default the background averages every non-target entry; ``top_k``
    restricts it to the k largest non-target logits of each position.
    """
    n, vocab = logits.shape
    if n == 0:
        raise InvalidInputError("no positions to summarise")
    rows = np.arange(n)
    z_t = logits[rows, targets]
    if top_k is None:
        z_bg = (logits.sum() - z_t.sum()) / (n * (vocab - 1))
    else:
        masked = logits.copy()
        masked[rows, targets] = -np.inf
        top = -np.sort(-masked, axis=1)[:, :top_k]
        z_bg = top.mean()
    z_target = float(z_t.mean())
    z_bg = float(z_bg)
    return GapRecord(z_target, z_bg, z_target - z_bg, float(logits.std()), n)


def gap_stats(model: ModelParams, corpus, n_samples: int | None = 200, seed: int = 0, top_k: int | None = None) -> GapRecord:
    logits, tgt = eval_logits(model, corpus, n_samples, seed)
    return gap_from_logits(logits, tgt, top_k)


def stats_from_logits(logits: np.ndarray) -> LogitStatsRecord:
    """Per-position statistics averaged over positions; max/min are global extremes."""
    if logits.shape[0] == 0:
        raise InvalidInputError("no positions to summarise")
    vocab = logits.shape[1]
    mean = logits.mean(axis=1)
    c = logits - mean[:, None]
    cnorm = np.sqrt((c * c).sum(axis=1))
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    p = np.exp(logp)
    ent = -(p * logp).sum(axis=1)
    return LogitStatsRecord(
        mean=float(mean.mean()),
        std=float((cnorm / np.sqrt(vocab)).mean()),
        centered_norm=float(cnorm.mean()),
        max=float(logits.max()),
        min=float(logits.min()),
        l2_norm=float(np.linalg.norm(logits, axis=1).mean()),
        entropy=float(np.maximum(ent, 0.0).mean()),
        max_prob=float(p.max(axis=1).mean()),
    )


def extended_stats(model: ModelParams, corpus, n_samples: int | None = 200, seed: int = 0) -> LogitStatsRecord:
    logits, _ = eval_logits(model, corpus, n_samples, seed)
    return stats_from_logits(logits)


@dataclass(frozen=True)
class StatsPoint:
    iteration: int
    epoch: int
    gap: GapRecord
    stats: LogitStatsRecord

    def row(self) -> list:
        g, s = self.gap, self.stats
        return [self.iteration, self.epoch, g.z_target, g.z_bg, g.gap, g.sigma,
                s.mean, s.std, s.centered_norm, s.max, s.min, s.l2_norm, s.entropy, s.max_prob]


@dataclass
class StatsSeries:
    points: list[StatsPoint] = field(default_factory=list)

    def __len__(self):
        return len(self.points)


def track(series: StatsSeries, point: StatsPoint) -> StatsSeries:
    if series.points:
        last = series.points[-1]
        if (point.iteration, point.epoch) <= (last.iteration, last.epoch):
            raise InvalidInputError(
                f"point ({point.iteration}, {point.epoch}) does not follow ({last.iteration}, {last.epoch})"
            )
    series.points.append(point)
    return series


def export_csv(series: StatsSeries, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SERIES_COLUMNS)
        for p in series.points:
            w.writerow([v if isinstance(v, int) else repr(float(v)) for v in p.row()])


def read_csv(path) -> StatsSeries:
    series = StatsSeries()
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SERIES_COLUMNS:
            raise InvalidInputError(f"unexpected header {reader.fieldnames}")
        for r in reader:
            f = {k: float(v) for k, v in r.items() if k not in ("iteration", "epoch")}
            n = 0  # position counts are not part of the CSV layout
            gap = GapRecord(f["z_target"], f["z_bg"], f["gap"], f["sigma"], n)
            stats = LogitStatsRecord(f["mean"], f["std"], f["centered_norm"], f["max"], f["min"],
                                     f["l2"], f["entropy"], f["max_prob"])
            track(series, StatsPoint(int(r["iteration"]), int(r["epoch"]), gap, stats))
    return series
