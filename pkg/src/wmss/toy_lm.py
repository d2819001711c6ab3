"""Fixed-window MLP language model with exact hand-written backprop.

Architecture: the last ``window`` tokens are embedded, concatenated, passed
through one tanh layer and projected to ``vocab`` logits.  Positions before
the start of a sequence are left-padded with ``PAD``; ``PAD`` is never a
prediction target.  All arrays are float64.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .logit_math import MAX_VOCAB, InvalidInputError

PAD = 0
BOS = 1
MAX_SEQ_LEN = 64


@dataclass(frozen=True)
class Dims:
    vocab: int = 32
    embed: int = 32
    hidden: int = 64
    window: int = 8

    def __post_init__(self):
        if not 4 <= self.vocab <= MAX_VOCAB:
            raise InvalidInputError(f"vocab must be in [4, {MAX_VOCAB}], got {self.vocab}")
        for name in ("embed", "hidden", "window"):
            if getattr(self, name) < 1:
                raise InvalidInputError(f"{name} must be >= 1")


@dataclass
class TokenSequence:
    tokens: list[int]
    sample_id: int


@dataclass
class ModelParams:
    """Model weights; GradientSet reuses this class with the same shapes."""

    embedding: np.ndarray  # (V, d)
    hidden_weights: np.ndarray  # (W*d, h)
    hidden_bias: np.ndarray  # (h,)
    output_weights: np.ndarray  # (h, V)
    output_bias: np.ndarray  # (V,)

    @property
    def dims(self) -> Dims:
        vocab, embed = self.embedding.shape
        return Dims(vocab, embed, self.hidden_bias.shape[0], self.hidden_weights.shape[0] // embed)

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, f.name) for f in fields(self)]

    def copy(self) -> ModelParams:
        return ModelParams(*(a.copy() for a in self.arrays()))

    def zeros_like(self) -> ModelParams:
        return ModelParams(*(np.zeros_like(a) for a in self.arrays()))

    def scaled(self, c: float) -> ModelParams:
        return ModelParams(*(c * a for a in self.arrays()))

    def sgd_(self, grads: ModelParams, eta: float) -> None:
        for p, g in zip(self.arrays(), grads.arrays()):
            p -= eta * g

    def allclose(self, other: ModelParams, **kw) -> bool:
        return all(np.allclose(a, b, **kw) for a, b in zip(self.arrays(), other.arrays()))

    def equal(self, other: ModelParams) -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


GradientSet = ModelParams


def init_params(seed: int, dims: Dims = Dims()) -> ModelParams:
    """Normal(0, 1/fan_in) weights and zero biases.

    An embedding row is a linear map from a one-hot input, so its fan-in is 1.
    """
    rng = np.random.default_rng(seed)
    wd = dims.window * dims.embed
    return ModelParams(
        embedding=rng.standard_normal((dims.vocab, dims.embed)),
        hidden_weights=rng.standard_normal((wd, dims.hidden)) / np.sqrt(wd),
        hidden_bias=np.zeros(dims.hidden),
        output_weights=rng.standard_normal((dims.hidden, dims.vocab)) / np.sqrt(dims.hidden),
        output_bias=np.zeros(dims.vocab),
    )


@dataclass
class Cache:
    contexts: np.ndarray  # (B, W) int
    inputs: np.ndarray  # (B, W*d), possibly noised
    hidden: np.ndarray  # (B, h) post-tanh


def forward(params: ModelParams, contexts, input_noise: np.ndarray | None = None):
    """Logits for a batch of (B, W) contexts, or a single (W,) context.

    ``input_noise`` (same shape as the concatenated embeddings) is added
    before the hidden layer; it is how the NEFTune-style baseline perturbs
    training inputs.
    """
    ctx = np.asarray(contexts)
    single = ctx.ndim == 1
    ctx = np.atleast_2d(ctx)
    vocab, embed = params.embedding.shape
    window = params.hidden_weights.shape[0] // embed
    if ctx.shape[1] != window:
        raise InvalidInputError(f"context must have exactly {window} tokens, got {ctx.shape[1]}")
    if ctx.size and (ctx.min() < 0 or ctx.max() >= vocab):
        raise InvalidInputError(f"token outside vocabulary [0, {vocab})")
    x = params.embedding[ctx].reshape(ctx.shape[0], window * embed)
    if input_noise is not None:
        x = x + input_noise
    hid = np.tanh(x @ params.hidden_weights + params.hidden_bias)
    logits = hid @ params.output_weights + params.output_bias
    cache = Cache(ctx, x, hid)
    return (logits[0] if single else logits), cache


def backward(params: ModelParams, cache: Cache, grad_logits) -> GradientSet:
    """Exact parameter gradient of the scalar whose logit-gradient is ``grad_logits``."""
    g = np.atleast_2d(np.asarray(grad_logits, dtype=np.float64))
    if g.shape != (cache.hidden.shape[0], params.output_bias.shape[0]):
        raise InvalidInputError(f"grad_logits shape {g.shape} does not match the cached batch")
    vocab, embed = params.embedding.shape
    d_out_w = cache.hidden.T @ g
    d_out_b = g.sum(axis=0)
    d_pre = (g @ params.output_weights.T) * (1.0 - cache.hidden**2)
    d_hid_w = cache.inputs.T @ d_pre
    d_hid_b = d_pre.sum(axis=0)
    d_x = (d_pre @ params.hidden_weights.T).reshape(-1, embed)
    d_emb = np.zeros_like(params.embedding)
    np.add.at(d_emb, cache.contexts.reshape(-1), d_x)
    return ModelParams(d_emb, d_hid_w, d_hid_b, d_out_w, d_out_b)


def bound_logits(params: ModelParams) -> float:
    """Upper bound on |logit|: tanh keeps activations in [-1, 1]."""
    col_norms = np.linalg.norm(params.output_weights, axis=0)
    return float(np.max(col_norms * np.sqrt(params.hidden_bias.shape[0]) + np.abs(params.output_bias)))


# --- sequences -> (context, target) positions --------------------------------


def context_at(tokens, t: int, window: int) -> np.ndarray:
    """The ``window`` tokens preceding position t, left-padded with PAD."""
    ctx = np.full(window, PAD, dtype=np.int64)
    prev = np.asarray(tokens[max(0, t - window) : t], dtype=np.int64)
    if prev.size:
        ctx[window - prev.size :] = prev
    return ctx


def positions(seqs: list[TokenSequence], window: int):
    """Flatten a corpus to (contexts (N, W), targets (N,), owner (N,)).

    ``owner`` holds the index into ``seqs`` for each position.
    """
    ctxs, tgts, owner = [], [], []
    for i, s in enumerate(seqs):
        toks = np.asarray(s.tokens, dtype=np.int64)
        if toks.size < 2:
            raise InvalidInputError(f"sequence {s.sample_id} has no predictable position")
        padded = np.concatenate([np.full(window, PAD, dtype=np.int64), toks])
        # row t holds padded[t : t + window], i.e. tokens[t - window : t]
        idx = np.arange(1, toks.size)[:, None] + np.arange(window)[None, :]
        ctxs.append(padded[idx])
        tgts.append(toks[1:])
        owner.append(np.full(toks.size - 1, i, dtype=np.int64))
    if not ctxs:
        return np.zeros((0, window), dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(ctxs), np.concatenate(tgts), np.concatenate(owner)


def _row_entropy(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    p = np.exp(logp)
    return -(p * logp).sum(axis=1)


def sample_entropy(params: ModelParams, seq: TokenSequence) -> float:
    """Mean next-token entropy (nats) over every predictable position of seq."""
    return float(corpus_entropies(params, [seq])[0])


def corpus_entropies(params: ModelParams, seqs: list[TokenSequence]) -> np.ndarray:
    ctx, _, owner = positions(seqs, params.dims.window)
    logits, _ = forward(params, ctx)
    h = _row_entropy(logits)
    return np.bincount(owner, weights=h, minlength=len(seqs)) / np.bincount(owner, minlength=len(seqs))


# --- synthetic corpora ---------------------------------------------------------

TASKS = ("ambiguous-grammar", "modular-add", "copy")


@dataclass(frozen=True)
class Grammar:
    """Second-order grammar in which every state has two plausible continuations.

    The token after ``s`` is ``primary[s]`` unless the token before ``s`` lies
    in ``switch``, in which case it is ``alternate[s]``.  Whichever branch is
    wrong at a position is a plausible-but-wrong candidate.  With probability
    ``noise`` the next token is uniform over content tokens instead.
    """

    primary: dict[int, int]
    alternate: dict[int, int]
    switch: frozenset[int]
    noise: float

    def next_token(self, prev2: int, prev1: int) -> int:
        table = self.alternate if prev2 in self.switch else self.primary
        return table[prev1]


def make_grammar(vocab: int, seed: int, switch_frac: float = 0.3, noise: float = 0.1) -> Grammar:
    rng = np.random.default_rng([seed, 0x6A])
    content = np.arange(2, vocab)
    primary = {int(s): int(t) for s, t in zip(content, rng.permutation(content))}
    alternate = {}
    for s in content:
        choices = content[content != primary[int(s)]]
        alternate[int(s)] = int(rng.choice(choices))
    n_switch = max(1, round(switch_frac * len(content)))
    switch = frozenset(int(c) for c in rng.choice(content, size=n_switch, replace=False))
    return Grammar(primary, alternate, switch, noise)


def gen_corpus(task: str, seed: int, n: int, vocab: int = 32, seq_len: int = 16, **task_kw) -> list[TokenSequence]:
    """Deterministic synthetic corpus; every sequence starts with BOS."""
    if task not in TASKS:
        raise InvalidInputError(f"unknown task {task!r}; choose from {TASKS}")
    if n < 1:
        raise InvalidInputError("corpus size must be >= 1")
    if not 3 <= seq_len <= MAX_SEQ_LEN:
        raise InvalidInputError(f"seq_len must be in [3, {MAX_SEQ_LEN}]")
    rng = np.random.default_rng([seed, TASKS.index(task)])
    if task == "ambiguous-grammar":
        grammar = task_kw.get("grammar") or make_grammar(vocab, task_kw.get("grammar_seed", 0))
        return [_grammar_sequence(grammar, vocab, seq_len, rng, i) for i in range(n)]
    if task == "modular-add":
        return [_modadd_sequence(vocab, seq_len, rng, i) for i in range(n)]
    return [_copy_sequence(vocab, seq_len, rng, i) for i in range(n)]


def _grammar_sequence(g: Grammar, vocab, seq_len, rng, sid) -> TokenSequence:
    toks = [BOS, int(rng.integers(2, vocab))]
    while len(toks) < seq_len:
        if rng.random() < g.noise:
            toks.append(int(rng.integers(2, vocab)))
        else:
            toks.append(g.next_token(toks[-2], toks[-1]))
    return TokenSequence(toks, sid)


def _modadd_sequence(vocab, seq_len, rng, sid) -> TokenSequence:
    m = vocab - 2
    a, b = (int(v) for v in rng.integers(0, m, size=2))
    triple = [a + 2, b + 2, (a + b) % m + 2]
    body = (triple * (seq_len // 3 + 1))[: seq_len - 1]
    return TokenSequence([BOS, *body], sid)


def _copy_sequence(vocab, seq_len, rng, sid) -> TokenSequence:
    delim = vocab - 1
    plen = (seq_len - 2) // 2
    prefix = [int(t) for t in rng.integers(2, vocab - 1, size=plen)]
    toks = [BOS, *prefix, delim, *prefix]
    return TokenSequence(toks[:seq_len], sid)


def modadd_determined(seq: TokenSequence) -> list[int]:
    """Positions of a modular-add sequence whose target follows from context."""
    return list(range(3, len(seq.tokens)))


def loss_and_grad(params: ModelParams, contexts, targets) -> tuple[float, GradientSet]:
    """Mean next-token CE over the given positions and its exact gradient."""
    logits, cache = forward(params, contexts)
    logits = np.atleast_2d(logits)
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    targets = np.asarray(targets)
    g = np.exp(logp)
    g[rows, targets] -= 1.0
    return float(-logp[rows, targets].mean()), backward(params, cache, g / n)
