"""Weak-driven training pipeline and the SFT / NEFTune / UNDIAL baselines.

Batch order for epoch ``e`` of phase ``t`` comes from ``default_rng([seed, t, e])``
in every method, so a baseline with ``(K + 1) * epochs_per_phase`` epochs
sees exactly the batches of Phase 1 followed by the K joint phases.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .curriculum import CurriculumConfig, curriculum_weights, entropy_dynamics, weighted_sample
from .diagnostics import GapRecord, eval_logits, gap_from_logits
from .logit_math import InvalidInputError, ce_rows, check_mix, log_softmax_rows
from .toy_lm import Dims, ModelParams, TokenSequence, backward, forward, gen_corpus, init_params, positions

log = logging.getLogger(__name__)

METHODS = ("sft", "wmss", "neftune", "undial")


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.5  # serialised as "lambda"
    eta: float = 1e-2
    epochs_per_phase: int = 2
    outer_iterations: int = 1
    batch_size: int = 32
    seed: int = 0
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    update_weak: bool = True
    method: str = "wmss"
    method_noise_scale: float = 5.0
    # experiment setup (data and model shape)
    task: str = "ambiguous-grammar"
    n_train: int = 2000
    n_eval: int = 500
    seq_len: int = 16
    vocab: int = 32
    embed: int = 32
    hidden: int = 64
    window: int = 8
    grammar_seed: int = 0

    def __post_init__(self):
        check_mix(self.lam)
        if self.eta <= 0:
            raise InvalidInputError("eta must be positive")
        if self.outer_iterations < 1:
            raise InvalidInputError("outer_iterations must be >= 1")
        if self.epochs_per_phase < 0 or self.batch_size < 1:
            raise InvalidInputError("epochs_per_phase must be >= 0 and batch_size >= 1")
        if self.method not in METHODS:
            raise InvalidInputError(f"unknown method {self.method!r}; choose from {METHODS}")
        if isinstance(self.curriculum, dict):
            object.__setattr__(self, "curriculum", CurriculumConfig(**self.curriculum))

    @property
    def dims(self) -> Dims:
        return Dims(self.vocab, self.embed, self.hidden, self.window)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown or "lam" in d and "lambda" in d:
            raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
        if isinstance(d.get("curriculum"), dict):
            cur = d["curriculum"]
            bad = set(cur) - {"alpha", "beta", "gamma"}
            if bad:
                raise InvalidInputError(f"unknown curriculum keys: {sorted(bad)}")
            d["curriculum"] = CurriculumConfig(**cur)
        return cls(**d)

    @classmethod
    def load(cls, path) -> TrainConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))


def make_data(cfg: TrainConfig) -> tuple[list[TokenSequence], list[TokenSequence]]:
    """Train/eval corpora for a config; the grammar itself is fixed by grammar_seed."""
    kw = dict(vocab=cfg.vocab, seq_len=cfg.seq_len, grammar_seed=cfg.grammar_seed)
    train = gen_corpus(cfg.task, 2 * cfg.seed, cfg.n_train, **kw)
    held = gen_corpus(cfg.task, 2 * cfg.seed + 1, cfg.n_eval, **kw)
    return train, held


@dataclass
class CheckpointPair:
    weak: ModelParams
    strong: ModelParams

    def __post_init__(self):
        if self.weak.dims != self.strong.dims:
            raise InvalidInputError(f"weak {self.weak.dims} and strong {self.strong.dims} differ")


@dataclass(frozen=True)
class EpochRecord:
    iteration: int
    epoch: int
    method: str
    train_loss: float
    eval_loss: float
    eval_acc: float
    gap: GapRecord


@dataclass
class TrainReport:
    config: TrainConfig
    epochs: list[EpochRecord] = field(default_factory=list)
    checkpoints: list[ModelParams] = field(default_factory=list)
    weak_forward_positions: int = 0  # extra forward cost paid by joint training
    final_pair: CheckpointPair | None = None

    @property
    def seed(self) -> int:
        return self.config.seed

    def rows(self) -> list[list]:
        return [[e.iteration, e.epoch, e.method, e.train_loss, e.eval_loss, e.eval_acc,
                 e.gap.z_target, e.gap.z_bg, e.gap.gap, e.gap.sigma] for e in self.epochs]


REPORT_COLUMNS = ("iteration", "epoch", "method", "train_loss", "eval_loss", "eval_acc", "z_target", "z_bg", "gap", "sigma")


def write_report(report: TrainReport, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for row in report.rows():
            w.writerow([v if isinstance(v, (int, str)) else repr(float(v)) for v in row])


# --- data plumbing ---------------------------------------------------------------


class PositionData:
    """A corpus flattened to next-token positions, indexable by sequence."""

    def __init__(self, seqs: list[TokenSequence], window: int):
        self.n_seqs = len(seqs)
        self.contexts, self.targets, owner = positions(seqs, window)
        counts = np.bincount(owner, minlength=self.n_seqs)
        self.starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        self.counts = counts

    def rows(self, seq_idx: np.ndarray) -> np.ndarray:
        counts = self.counts[seq_idx]
        offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        return np.repeat(self.starts[seq_idx], counts) + offs

    def batches(self, batch_size: int, seed: int, iteration: int, epoch: int):
        order = np.random.default_rng([seed, iteration, epoch]).permutation(self.n_seqs)
        for i in range(0, self.n_seqs, batch_size):
            r = self.rows(order[i : i + batch_size])
            yield self.contexts[r], self.targets[r]


def evaluate(model: ModelParams, held: PositionData) -> tuple[float, float, GapRecord]:
    logits, _ = forward(model, held.contexts)
    logp = log_softmax_rows(logits)
    rows = np.arange(len(held.targets))
    loss = float(-logp[rows, held.targets].mean())
    acc = float((logits.argmax(axis=1) == held.targets).mean())
    return loss, acc, gap_from_logits(logits, held.targets)


# --- single steps ----------------------------------------------------------------


def sft_step(params: ModelParams, contexts, targets, eta: float, method: str = "sft",
             noise_scale: float = 0.0, rng: np.random.Generator | None = None) -> float:
    """One SGD step of plain or noise-regularised CE; returns the batch loss."""
    noise = None
    if method == "neftune":
        wd = params.hidden_weights.shape[0]
        noise = rng.uniform(-1.0, 1.0, size=(len(targets), wd)) * (noise_scale / np.sqrt(wd))
    logits, cache = forward(params, contexts, noise)
    if method == "undial":
        rows = np.arange(len(targets))
        logits = logits.copy()
        logits[rows, targets] -= np.abs(rng.standard_normal(len(targets))) * noise_scale
    loss, g = ce_rows(logits, targets)
    params.sgd_(backward(params, cache, g), eta)
    return loss


def joint_train_step(pair: CheckpointPair, contexts, targets, lam: float, eta: float, update_weak: bool = True) -> float:
    """CE on mixed logits; strong gets lam * g, weak (1 - lam) * g if co-trained."""
    z_w, cache_w = forward(pair.weak, contexts)
    z_s, cache_s = forward(pair.strong, contexts)
    loss, g = ce_rows(lam * z_s + (1.0 - lam) * z_w, targets)
    grad_s = backward(pair.strong, cache_s, lam * g)
    if update_weak:
        grad_w = backward(pair.weak, cache_w, (1.0 - lam) * g)
        pair.weak.sgd_(grad_w, eta)
    pair.strong.sgd_(grad_s, eta)
    return loss


# --- phases --------------------------------------------------------------------


def _run_epochs(model, data, held, cfg, report, iteration, n_epochs, method, epoch_offset=0, pair=None):
    for e in range(n_epochs):
        epoch = epoch_offset + e
        rng = np.random.default_rng([cfg.seed, iteration, epoch, 0x5E])
        losses, weights = [], []
        for ctx, tgt in data.batches(cfg.batch_size, cfg.seed, iteration, epoch):
            if pair is not None:
                loss = joint_train_step(pair, ctx, tgt, cfg.lam, cfg.eta, cfg.update_weak)
                report.weak_forward_positions += len(tgt)
            else:
                loss = sft_step(model, ctx, tgt, cfg.eta, method, cfg.method_noise_scale, rng)
            losses.append(loss)
            weights.append(len(tgt))
        train_loss = float(np.average(losses, weights=weights)) if losses else float("nan")
        ev_loss, ev_acc, gap = evaluate(pair.strong if pair is not None else model, held)
        report.epochs.append(EpochRecord(iteration, epoch, method, train_loss, ev_loss, ev_acc, gap))
        log.debug("iter %d epoch %d %s loss %.4f eval %.4f acc %.4f", iteration, epoch, method, train_loss, ev_loss, ev_acc)


def phase1_sft(m0: ModelParams, train: list[TokenSequence], cfg: TrainConfig, held=None, report=None) -> CheckpointPair:
    """SFT from m0; returns (weak=m0, strong=trained copy)."""
    if not train:
        raise InvalidInputError("training corpus is empty")
    report = report if report is not None else TrainReport(cfg)
    held_pd = PositionData(held if held else train, m0.dims.window)
    strong = m0.copy()
    _run_epochs(strong, PositionData(train, m0.dims.window), held_pd, cfg, report, 0, cfg.epochs_per_phase, "sft")
    return CheckpointPair(m0.copy(), strong)


def _uniform(p: np.ndarray) -> bool:
    return bool(np.all(p == p[0]))


def run_wmss(m0: ModelParams, train: list[TokenSequence], held: list[TokenSequence], cfg: TrainConfig):
    """Phase 1 SFT, then K rounds of curriculum activation + joint training.

    Round t pairs weak = M_{t-1} with strong = M_t and produces M_{t+1}.
    Exactly uniform curriculum weights activate the corpus unchanged.
    """
    cfg = replace(cfg, method="wmss")
    report = TrainReport(cfg)
    window = m0.dims.window
    held_pd = PositionData(held, window)
    pair = phase1_sft(m0, train, cfg, held, report)
    history = [pair.weak, pair.strong]  # M_0, M_1
    report.checkpoints.append(pair.strong.copy())
    for t in range(1, cfg.outer_iterations + 1):
        weak, strong = history[t - 1].copy(), history[t].copy()
        records = entropy_dynamics(weak, strong, train)
        weights = curriculum_weights(records, cfg.curriculum)
        active = train if _uniform(weights.probs) else weighted_sample(train, weights, seed=[cfg.seed, t, 0xC0])
        joint = CheckpointPair(weak, strong)
        _run_epochs(None, PositionData(active, window), held_pd, cfg, report, t, cfg.epochs_per_phase, "wmss", pair=joint)
        history.append(joint.strong.copy())
        report.checkpoints.append(joint.strong.copy())
        report.final_pair = CheckpointPair(joint.weak.copy(), joint.strong.copy())
    return history[-1], report


def run_baseline(m0: ModelParams, train: list[TokenSequence], held: list[TokenSequence], cfg: TrainConfig):
    """Plain or noise-regularised SFT for (K + 1) * epochs_per_phase epochs."""
    if cfg.method == "wmss":
        raise InvalidInputError("run_baseline handles sft, neftune and undial only")
    if not train:
        raise InvalidInputError("training corpus is empty")
    report = TrainReport(cfg)
    window = m0.dims.window
    data, held_pd = PositionData(train, window), PositionData(held, window)
    model = m0.copy()
    for t in range(cfg.outer_iterations + 1):
        _run_epochs(model, data, held_pd, cfg, report, t, cfg.epochs_per_phase, cfg.method)
        report.checkpoints.append(model.copy())
    return model, report


def run(cfg: TrainConfig, train=None, held=None, m0: ModelParams | None = None):
    """Dispatch on cfg.method with data and init derived from the config."""
    if train is None or held is None:
        train, held = make_data(cfg)
    m0 = m0 if m0 is not None else init_params(cfg.seed, cfg.dims)
    if cfg.method == "wmss":
        return run_wmss(m0, train, held, cfg)
    return run_baseline(m0, train, held, cfg)


def negative_mass_in_vivo(pair: CheckpointPair, held: list[TokenSequence], lam: float):
    """Average non-target mass under P_mix vs P_strong on premise-holding positions.

    Returns (n_premise, n_total, mean_neg_mix, mean_neg_strong).
    """
    z_w, tgt = eval_logits(pair.weak, held)
    z_s, _ = eval_logits(pair.strong, held)
    rows = np.arange(len(tgt))
    m_w = z_w[rows, tgt][:, None] - z_w
    m_s = z_s[rows, tgt][:, None] - z_s
    premise = np.all(m_w <= m_s + 0.0, axis=1)
    p_mix = np.exp(log_softmax_rows(lam * z_s + (1 - lam) * z_w))
    p_s = np.exp(log_softmax_rows(z_s))
    neg_mix = 1.0 - p_mix[rows, tgt]
    neg_s = 1.0 - p_s[rows, tgt]
    if not premise.any():
        return 0, len(tgt), float("nan"), float("nan")
    return int(premise.sum()), len(tgt), float(neg_mix[premise].mean()), float(neg_s[premise].mean())
