"""Toy corpora with known ground truth, char-level ingestion and the binary on-disk format.

Binary layout: three little-endian u32 values ``(n, d, count)`` followed by
``count * d`` token ids as little-endian u16, row-major.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import oracle
from .errors import ArgumentError, IngestionError
from .oracle import EnumeratedDist

_HEADER = struct.Struct("<III")


def _check_dist(p, what="probs", axis=-1):
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ArgumentError(f"{what} must be finite and nonnegative")
    if not np.allclose(p.sum(axis=axis), 1.0, atol=1e-9):
        raise ArgumentError(f"{what} must sum to 1")
    return p


@dataclass
class Corpus:
    n: int
    d: int
    sequences: np.ndarray
    truth: dict | None = field(default=None)

    def __post_init__(self):
        self.sequences = np.asarray(self.sequences, dtype=np.int64).reshape(-1, self.d)
        if self.sequences.size and (self.sequences.min() < 0 or self.sequences.max() >= self.n):
            raise ArgumentError(f"tokens must lie in [0, {self.n})")

    def __len__(self):
        return self.sequences.shape[0]

    def split(self, frac: float):
        """Leading ``1 - frac`` for training, trailing ``frac`` held out."""
        k = len(self) - int(round(frac * len(self)))
        return (Corpus(self.n, self.d, self.sequences[:k], self.truth),
                Corpus(self.n, self.d, self.sequences[k:], self.truth))

    def data_distribution(self) -> EnumeratedDist:
        """Exact ``p_data`` from the ground-truth descriptor."""
        t = self.truth or {}
        if t.get("kind") == "iid":
            probs = np.asarray(t["probs"])
            return EnumeratedDist.product([probs] * self.d)
        if t.get("kind") == "markov":
            init, trans = np.asarray(t["initial"]), np.asarray(t["transition"])

            def prob(x):
                p = init[x[0]]
                for a, b in zip(x[:-1], x[1:]):
                    p *= trans[a, b]
                return p
            return EnumeratedDist.from_function(self.n, self.d, prob)
        raise ArgumentError("corpus has no enumerable ground truth")

    def empirical(self) -> EnumeratedDist:
        idx = oracle.encode(self.sequences, self.n)
        counts = np.bincount(idx, minlength=self.n**self.d).astype(float)
        return EnumeratedDist(self.d, self.n, counts / counts.sum())

    def unigram_entropy(self) -> float:
        """Entropy in nats of the empirical token frequencies."""
        c = np.bincount(self.sequences.ravel(), minlength=self.n).astype(float)
        p = c[c > 0] / c.sum()
        return float(-(p * np.log(p)).sum())


def gen_iid(n: int, d: int, probs, count: int, seed: int = 0) -> Corpus:
    probs = _check_dist(probs)
    if probs.shape != (n,):
        raise ArgumentError(f"probs must have length {n}")
    rng = np.random.default_rng(seed)
    seqs = rng.choice(n, size=(count, d), p=probs)
    return Corpus(n, d, seqs, {"kind": "iid", "probs": probs.tolist(), "seed": seed})


def gen_markov(n: int, d: int, initial, transition, count: int, seed: int = 0) -> Corpus:
    initial = _check_dist(initial, "initial")
    transition = _check_dist(transition, "transition rows")
    if initial.shape != (n,) or transition.shape != (n, n):
        raise ArgumentError("initial must be (n,) and transition (n, n)")
    rng = np.random.default_rng(seed)
    seqs = np.empty((count, d), dtype=np.int64)
    seqs[:, 0] = rng.choice(n, size=count, p=initial)
    cdf = np.cumsum(transition, axis=1)
    for i in range(1, d):
        u = rng.random(count)[:, None]
        seqs[:, i] = np.minimum((u >= cdf[seqs[:, i - 1]]).sum(axis=1), n - 1)
    truth = {"kind": "markov", "initial": initial.tolist(), "transition": transition.tolist(),
             "seed": seed}
    return Corpus(n, d, seqs, truth)


def regenerate(corpus: Corpus) -> Corpus:
    """Re-run the generator recorded in the ground-truth descriptor."""
    t = corpus.truth or {}
    if t.get("kind") == "iid":
        return gen_iid(corpus.n, corpus.d, t["probs"], len(corpus), t["seed"])
    if t.get("kind") == "markov":
        return gen_markov(corpus.n, corpus.d, t["initial"], t["transition"], len(corpus), t["seed"])
    raise ArgumentError("corpus was not produced by a generator")


def markov_stationary(transition) -> np.ndarray:
    """Stationary law ``mu`` with ``mu P = mu`` (left eigenvector for eigenvalue 1)."""
    P = np.asarray(transition, dtype=float)
    w, v = np.linalg.eig(P.T)
    mu = np.real(v[:, np.argmin(np.abs(w - 1.0))])
    return mu / mu.sum()


def markov_entropy_rate(transition) -> float:
    """``sum_i mu_i H(P[i])`` in nats."""
    P = np.asarray(transition, dtype=float)
    mu = markov_stationary(P)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.where(P > 0, P * np.log(P), 0.0).sum(axis=1)
    return float(mu @ h)


# ------------------------------------------------------------------ text


def default_vocab() -> list[str]:
    return [chr(c) for c in range(ord("a"), ord("z") + 1)]


def tokenize_chars(text: str, vocab, d: int, unknown: str | None = None) -> Corpus:
    """Map characters to ids and cut into length-``d`` rows; an incomplete tail is dropped.

    Characters outside ``vocab`` raise :class:`IngestionError` unless
    ``unknown`` names a vocabulary entry to map them to.
    """
    if d < 1:
        raise ArgumentError("chunk length must be positive")
    index = {c: i for i, c in enumerate(vocab)}
    if unknown is not None and unknown not in index:
        raise ArgumentError(f"unknown token {unknown!r} is not in the vocabulary")
    bad = sorted(set(text) - index.keys())
    if bad and unknown is None:
        raise IngestionError(f"characters not in vocabulary: {bad}")
    fallback = index.get(unknown, -1)
    ids = np.fromiter((index.get(c, fallback) for c in text), dtype=np.int64, count=len(text))
    keep = (len(ids) // d) * d
    return Corpus(len(vocab), d, ids[:keep].reshape(-1, d), {"kind": "text"})


def detokenize(ids, vocab) -> str:
    ids = np.asarray(ids, dtype=np.int64).ravel()
    if ids.size and (ids.min() < 0 or ids.max() >= len(vocab)):
        raise ArgumentError("token id outside the vocabulary")
    return "".join(vocab[i] for i in ids)


def read_vocab(path) -> list[str]:
    """One character per line; index is the line number."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    for i, c in enumerate(lines):
        if len(c) != 1:
            raise IngestionError(f"vocab line {i + 1} must hold exactly one character, got {c!r}")
    if len(set(lines)) != len(lines):
        raise IngestionError("vocab contains duplicate characters")
    return lines


def write_vocab(path, vocab) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("".join(c + "\n" for c in vocab))


# ------------------------------------------------------------------ binary io


def corpus_bytes(corpus: Corpus) -> bytes:
    if corpus.n > 0xFFFF + 1:
        raise ArgumentError("vocabulary too large for 16-bit token ids")
    return _HEADER.pack(corpus.n, corpus.d, len(corpus)) + corpus.sequences.astype("<u2").tobytes()


def save_corpus(path, corpus: Corpus) -> None:
    with open(path, "wb") as fh:
        fh.write(corpus_bytes(corpus))


def parse_corpus(data: bytes) -> Corpus:
    if len(data) < _HEADER.size:
        raise IngestionError("corpus file too short for its header")
    n, d, count = _HEADER.unpack_from(data)
    if d == 0:
        raise IngestionError("corpus header has zero sequence length")
    need = _HEADER.size + 2 * d * count
    if len(data) != need:
        raise IngestionError(f"corpus file has {len(data)} bytes, header implies {need}")
    toks = np.frombuffer(data, dtype="<u2", offset=_HEADER.size).astype(np.int64)
    try:
        return Corpus(n, d, toks.reshape(count, d))
    except ArgumentError as e:
        raise IngestionError(str(e)) from None


def load_corpus(path) -> Corpus:
    with open(path, "rb") as fh:
        return parse_corpus(fh.read())
