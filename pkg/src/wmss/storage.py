"""Checkpoint and corpus files.

Checkpoint layout (little-endian)::

    8s   magic  b"WMSSCKPT"
    u4   format version
    u4 x4 vocab, embed, hidden, window
    i8   seed
    f8[] embedding, hidden_weights, hidden_bias, output_weights, output_bias
         (row-major, in that order)
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .logit_math import InvalidInputError
from .toy_lm import Dims, ModelParams, TokenSequence

MAGIC = b"WMSSCKPT"
VERSION = 1
_HEADER = struct.Struct("<8sI4Iq")


class CorruptFileError(OSError):
    """A checkpoint or corpus file that cannot be decoded."""


def _shapes(d: Dims):
    return [(d.vocab, d.embed), (d.window * d.embed, d.hidden), (d.hidden,), (d.hidden, d.vocab), (d.vocab,)]


def save_checkpoint(path, params: ModelParams, seed: int = 0) -> None:
    d = params.dims
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in params.arrays())
    Path(path).write_bytes(_HEADER.pack(MAGIC, VERSION, d.vocab, d.embed, d.hidden, d.window, seed) + body)


def load_checkpoint(path) -> tuple[ModelParams, int]:
    """Returns (params, seed); raises CorruptFileError on any layout mismatch."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CorruptFileError(f"{path}: truncated header")
    magic, version, vocab, embed, hidden, window, seed = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CorruptFileError(f"{path}: not a checkpoint file")
    if version != VERSION:
        raise CorruptFileError(f"{path}: unsupported version {version}")
    try:
        dims = Dims(vocab, embed, hidden, window)
    except InvalidInputError as exc:
        raise CorruptFileError(f"{path}: bad header ({exc})") from exc
    shapes = _shapes(dims)
    expected = _HEADER.size + 8 * sum(int(np.prod(s)) for s in shapes)
    if len(raw) != expected:
        raise CorruptFileError(f"{path}: expected {expected} bytes, found {len(raw)}")
    arrays, off = [], _HEADER.size
    for s in shapes:
        n = int(np.prod(s))
        arrays.append(np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(s).astype(np.float64))
        off += 8 * n
    params = ModelParams(*arrays)
    if not params.is_finite():
        raise CorruptFileError(f"{path}: non-finite parameters")
    return params, seed


def save_corpus(path, corpus: list[TokenSequence]) -> None:
    Path(path).write_text("".join(" ".join(map(str, s.tokens)) + "\n" for s in corpus))


def load_corpus(path) -> list[TokenSequence]:
    out = []
    for i, line in enumerate(Path(path).read_text().splitlines()):
        if not line.strip():
            continue
        try:
            toks = [int(t) for t in line.split()]
        except ValueError as exc:
            raise CorruptFileError(f"{path}:{i + 1}: non-integer token") from exc
        out.append(TokenSequence(toks, len(out)))
    if not out:
        raise CorruptFileError(f"{path}: empty corpus")
    return out
