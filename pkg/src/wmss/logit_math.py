"""Numerical kernel over single logit vectors.

Everything here is a pure function of float64 numpy arrays.  Softmax and
cross-entropy go through the max-subtracted log-sum-exp so the theory checks
can hold 1e-12-class tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_VOCAB = 256


class InvalidInputError(ValueError):
    """Raised for non-finite logits, malformed distributions or bad indices."""


class DimensionError(InvalidInputError):
    """Raised when paired vectors disagree in length."""


def as_logits(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] < 2:
        raise InvalidInputError(f"logit vector must be 1-D with length >= 2, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("logit vector contains NaN or Inf")
    return z


def as_probs(p, atol: float = 1e-12) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.shape[0] < 2:
        raise InvalidInputError(f"probability vector must be 1-D with length >= 2, got shape {p.shape}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise InvalidInputError("probability vector has negative or non-finite entries")
    if abs(p.sum() - 1.0) > atol * max(1, p.shape[0]):
        raise InvalidInputError(f"probabilities sum to {p.sum()!r}, not 1")
    return p


def check_target(y: int, vocab: int) -> int:
    y = int(y)
    if not 0 <= y < vocab:
        raise InvalidInputError(f"target index {y} outside [0, {vocab})")
    return y


def check_mix(lam: float) -> float:
    lam = float(lam)
    if not 0.0 <= lam <= 1.0:
        raise InvalidInputError(f"mixing coefficient must lie in [0, 1], got {lam}")
    return lam


def _same_length(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")


def log_softmax(z) -> np.ndarray:
    z = as_logits(z)
    shifted = z - z.max()
    return shifted - np.log(np.exp(shifted).sum())


def softmax(z) -> np.ndarray:
    z = as_logits(z)
    e = np.exp(z - z.max())
    return e / e.sum()


def entropy(p) -> float:
    """Shannon entropy in nats with 0 ln 0 := 0."""
    p = as_probs(p)
    nz = p[p > 0]
    return float(max(0.0, -(nz * np.log(nz)).sum()))


def ce_loss(z, y: int) -> float:
    z = as_logits(z)
    y = check_target(y, z.shape[0])
    return float(max(0.0, -log_softmax(z)[y]))


def ce_gradient(z, y: int) -> np.ndarray:
    """d/dz of -log softmax(z)[y], i.e. softmax(z) - e_y."""
    z = as_logits(z)
    y = check_target(y, z.shape[0])
    g = softmax(z)
    g[y] -= 1.0
    return g


def mix_logits(z_weak, z_strong, lam: float) -> np.ndarray:
    z_weak, z_strong = as_logits(z_weak), as_logits(z_strong)
    _same_length(z_weak, z_strong)
    lam = check_mix(lam)
    return lam * z_strong + (1.0 - lam) * z_weak


def margin(z, y: int, k: int) -> float:
    z = as_logits(z)
    y = check_target(y, z.shape[0])
    k = check_target(k, z.shape[0])
    if k == y:
        raise InvalidInputError("margin is undefined for k == y")
    return float(z[y] - z[k])


def margins(z, y: int) -> np.ndarray:
    """All target margins z[y] - z[k]; the entry at y is zero and meaningless."""
    z = as_logits(z)
    y = check_target(y, z.shape[0])
    return z[y] - z


def hard_negative_set(z_weak, z_strong, y: int) -> set[int]:
    z_weak, z_strong = as_logits(z_weak), as_logits(z_strong)
    _same_length(z_weak, z_strong)
    y = check_target(y, z_weak.shape[0])
    mw, ms = margins(z_weak, y), margins(z_strong, y)
    return {int(k) for k in np.flatnonzero(mw < ms) if k != y}


def softmax_hessian(p) -> np.ndarray:
    """Hessian of CE w.r.t. logits at distribution p: diag(p) - p p^T."""
    p = as_probs(p)
    if p.shape[0] > MAX_VOCAB:
        raise InvalidInputError(f"dense Hessians are capped at V={MAX_VOCAB}")
    return np.diag(p) - np.outer(p, p)


def cross_hessian(p_mix, lam: float) -> np.ndarray:
    """d(grad wrt weak logits)/d(strong logits) = lam (1 - lam) H_L."""
    lam = check_mix(lam)
    return lam * (1.0 - lam) * softmax_hessian(p_mix)


def centered(z) -> tuple[float, np.ndarray, float]:
    z = as_logits(z)
    mean = float(z.mean())
    c = z - mean
    return mean, c, float(np.sqrt(np.dot(c, c)))


@dataclass(frozen=True)
class LogitStatsRecord:
    mean: float
    std: float
    centered_norm: float
    max: float
    min: float
    l2_norm: float
    entropy: float
    max_prob: float


def logit_stats(z) -> LogitStatsRecord:
    z = as_logits(z)
    mean, _, cnorm = centered(z)
    p = softmax(z)
    return LogitStatsRecord(
        mean=mean,
        std=cnorm / np.sqrt(z.shape[0]),
        centered_norm=cnorm,
        max=float(z.max()),
        min=float(z.min()),
        l2_norm=float(np.linalg.norm(z)),
        entropy=entropy(p),
        max_prob=float(p.max()),
    )


# --- row-wise versions for (N, V) logit batches ---------------------------------


def log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def ce_rows(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean CE over rows and its gradient with respect to ``logits``."""
    n = logits.shape[0]
    logp = log_softmax_rows(logits)
    rows = np.arange(n)
    loss = float(-logp[rows, targets].mean())
    grad = np.exp(logp)
    grad[rows, targets] -= 1.0
    return loss, grad / n
