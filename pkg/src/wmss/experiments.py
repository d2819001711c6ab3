"""Paired-seed experiment drivers behind the CLI and the acceptance suite."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .diagnostics import eval_logits, stats_from_logits
from .theory import estimate_alpha
from .trainer import EpochRecord, TrainConfig, make_data, run

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PairedResult:
    seed: int
    baseline: EpochRecord  # final epoch of the baseline run
    wmss: EpochRecord  # final epoch of the WMSS run


def compare_methods(cfg: TrainConfig, seeds, baseline: str = "sft") -> list[PairedResult]:
    """WMSS vs a baseline on shared data and init, same total epoch budget."""
    out = []
    for seed in seeds:
        c = replace(cfg, seed=seed)
        train, held = make_data(c)
        _, rb = run(replace(c, method=baseline), train, held)
        _, rw = run(replace(c, method="wmss"), train, held)
        out.append(PairedResult(seed, rb.epochs[-1], rw.epochs[-1]))
        log.info("seed %d: %s acc %.4f, wmss acc %.4f", seed, baseline, rb.epochs[-1].eval_acc, rw.epochs[-1].eval_acc)
    return out


@dataclass(frozen=True)
class SaturationWitness:
    rel_target: np.ndarray  # |dz_target| / |z_target|, epoch over epoch
    rel_bg: np.ndarray  # |dz_bg| / max(|z_bg|, 1)
    settled_epoch: int | None  # first epoch after which both stay below the threshold

    def settles_before(self, epoch: int) -> bool:
        return self.settled_epoch is not None and self.settled_epoch < epoch


def saturation_witness(records: list[EpochRecord], threshold: float = 0.01) -> SaturationWitness:
    zt = np.array([r.gap.z_target for r in records])
    zb = np.array([r.gap.z_bg for r in records])
    rt = np.abs(np.diff(zt)) / np.maximum(np.abs(zt[1:]), 1e-12)
    rb = np.abs(np.diff(zb)) / np.maximum(np.abs(zb[1:]), 1.0)
    below = (rt < threshold) & (rb < threshold)
    settled = None
    # ratio i compares epochs i and i+1; find the earliest i with all later ratios below
    for i in range(len(below) - 1, -1, -1):
        if not below[i]:
            break
        settled = i + 1
    return SaturationWitness(rt, rb, settled)


@dataclass(frozen=True)
class SweepRow:
    lam: float
    seed: int
    eval_acc: float
    gap: float
    alpha_estimate: float
    lambda_cross: float


def sweep_lambda(cfg: TrainConfig, grid, seeds: int) -> list[SweepRow]:
    """One WMSS run per (lambda, seed); alpha from the final pair's eval logits."""
    rows = []
    for lam in grid:
        for seed in range(seeds):
            c = replace(cfg, lam=float(lam), seed=seed, method="wmss")
            train, held = make_data(c)
            _, report = run(c, train, held)
            last = report.epochs[-1]
            pair = report.final_pair
            n_w = stats_from_logits(eval_logits(pair.weak, held)[0]).centered_norm
            n_s = stats_from_logits(eval_logits(pair.strong, held)[0]).centered_norm
            est = estimate_alpha(n_w, n_s)
            rows.append(SweepRow(float(lam), seed, last.eval_acc, last.gap.gap, est.alpha, est.lambda_cross))
            log.info("lambda=%.3f seed=%d acc=%.4f", lam, seed, last.eval_acc)
    return rows


def sweep_means(rows: list[SweepRow]) -> dict[float, float]:
    lams = sorted({r.lam for r in rows})
    return {lam: float(np.mean([r.eval_acc for r in rows if r.lam == lam])) for lam in lams}
