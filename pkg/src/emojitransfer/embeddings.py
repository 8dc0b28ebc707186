"""CBOW word embeddings with negative sampling, trained from scratch.

Emojis are ordinary vocabulary items; a comment's sentence is its text tokens
followed by its emojis.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from emojitransfer.corpus import Comment, FrequencyTable, build_frequency_table, is_emoji
from emojitransfer.errors import ConfigError, DataError


@dataclass(frozen=True)
class EmbeddingConfig:
    dim: int = 50
    window: int = 5
    negative_samples: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    min_count: int = 1
    emoji_min_count: int = 1000
    ns_exponent: float = 0.75
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1 or self.window < 1 or self.negative_samples < 1:
            raise ConfigError("dim, window and negative_samples must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")


@dataclass
class EmbeddingTable:
    vocab: dict[str, int]
    vectors: np.ndarray
    counts: dict[str, int]
    # per-example losses, filled only when training with track_loss=True
    loss_trace: list[np.ndarray] = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        if self.vectors.shape[0] != len(self.vocab):
            raise DataError("one vector row per vocabulary token required")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def tokens(self) -> list[str]:
        return sorted(self.vocab, key=self.vocab.__getitem__)

    def __contains__(self, token: str) -> bool:
        return token in self.vocab

    def __getitem__(self, token: str) -> np.ndarray:
        return self.vectors[self.vocab[token]]

    def most_similar(self, vector: np.ndarray, topn: int = 10) -> list[tuple[str, float]]:
        norms = np.linalg.norm(self.vectors, axis=1) * (np.linalg.norm(vector) or 1.0)
        sims = self.vectors @ vector / np.where(norms == 0, 1.0, norms)
        order = np.argsort(-sims, kind="stable")[:topn]
        tokens = self.tokens
        return [(tokens[i], float(sims[i])) for i in order]

    def save(self, path: str | Path) -> None:
        """Write the word-vector text format plus an exact ``.f64`` sidecar."""
        path = Path(path)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"{len(self.vocab)} {self.dim}\n")
            for tok, row in zip(self.tokens, self.vectors):
                fh.write(tok + " " + " ".join(repr(float(x)) for x in row) + "\n")
        with open(str(path) + ".f64", "wb") as fh:
            fh.write(struct.pack("<QQ", *self.vectors.shape))
            fh.write(self.vectors.astype("<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path, counts: Mapping[str, int] | None = None) -> EmbeddingTable:
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            n, dim = map(int, fh.readline().split())
            tokens, rows = [], []
            for line in fh:
                parts = line.rstrip("\n").split(" ")
                tokens.append(parts[0])
                rows.append([float(x) for x in parts[1:]])
        vectors = np.array(rows, dtype=np.float64).reshape(n, dim)
        sidecar = Path(str(path) + ".f64")
        if sidecar.exists():
            raw = sidecar.read_bytes()
            shape = struct.unpack("<QQ", raw[:16])
            vectors = np.frombuffer(raw[16:], dtype="<f8").reshape(shape).astype(np.float64)
        return cls({t: i for i, t in enumerate(tokens)}, vectors, dict(counts or {}))


def build_vocab(freqs: FrequencyTable, config: EmbeddingConfig) -> dict[str, int]:
    """Tokens with count >= min_count, indexed by (count desc, token asc)."""
    kept = [(t, c) for t, c in freqs.counts.items() if c >= config.min_count]
    if not kept:
        raise DataError(f"no token reaches min_count={config.min_count}")
    kept.sort(key=lambda tc: (-tc[1], tc[0]))
    return {t: i for i, (t, _) in enumerate(kept)}


def sentence_of(comment: Comment) -> list[str]:
    return [*comment.tokens, *comment.emojis]


def init_vectors(n: int, dim: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    w_in = rng.uniform(-0.5 / dim, 0.5 / dim, size=(n, dim))
    w_out = np.zeros((n, dim))
    return w_in, w_out


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def cbow_example_grads(
    w_in: np.ndarray, w_out: np.ndarray, context: Sequence[int], target: int, negatives: Sequence[int]
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss and gradients of one CBOW example.

    loss = -log s(u_t . h) - sum_n log s(-u_n . h),  h = mean(w_in[context]).
    Returns (loss, grad wrt h, grad wrt the output rows [target, *negatives]);
    the gradient of each context row is grad_h / len(context).
    """
    h = w_in[list(context)].mean(axis=0)
    rows = [target, *negatives]
    u = w_out[rows]
    scores = u @ h
    labels = np.zeros(len(rows))
    labels[0] = 1.0
    g = _sigmoid(scores) - labels
    loss = np.logaddexp(0.0, -scores[0]) + np.logaddexp(0.0, scores[1:]).sum()
    return float(loss), g @ u, np.outer(g, h)


def cbow_loss(w_in, w_out, context, target, negatives) -> float:
    h = w_in[list(context)].mean(axis=0)
    s_pos = w_out[target] @ h
    s_neg = w_out[list(negatives)] @ h if len(negatives) else np.zeros(0)
    return float(np.logaddexp(0.0, -s_pos) + np.logaddexp(0.0, s_neg).sum())


def cbow_step(w_in, w_out, context, target, negatives, lr: float) -> float:
    """Apply one in-place SGD update for a single example; returns its loss."""
    loss, grad_h, grad_u = cbow_example_grads(w_in, w_out, context, target, negatives)
    rows = [target, *negatives]
    np.add.at(w_out, rows, -lr * grad_u)
    np.add.at(w_in, list(context), -lr * grad_h / len(context))
    return loss


def _examples(sentences: list[np.ndarray], window: int):
    for sent in sentences:
        n = len(sent)
        for pos in range(n):
            ctx = np.concatenate([sent[max(0, pos - window):pos], sent[pos + 1:pos + 1 + window]])
            if len(ctx):
                yield ctx, int(sent[pos])


def train_cbow(
    corpus: Iterable[Comment],
    config: EmbeddingConfig = EmbeddingConfig(),
    freqs: FrequencyTable | None = None,
    track_loss: bool = False,
) -> EmbeddingTable:
    """Train CBOW vectors with negative sampling over the comments.

    Deterministic for a fixed (corpus, config); the learning rate decays
    linearly to 1e-4 of its initial value over all examples.
    """
    corpus = list(corpus)
    if freqs is None:
        freqs = build_frequency_table(corpus)
    vocab = build_vocab(freqs, config)
    sentences = []
    for c in corpus:
        idx = [vocab[t] for t in sentence_of(c) if t in vocab]
        if len(idx) >= 2:
            sentences.append(np.array(idx, dtype=np.int64))
    if not sentences:
        raise DataError("corpus has no sentence with at least two in-vocabulary tokens")

    rng = np.random.default_rng(config.seed)
    w_in, w_out = init_vectors(len(vocab), config.dim, rng)
    counts = np.array([freqs[t] for t in sorted(vocab, key=vocab.__getitem__)], dtype=np.float64)
    noise = counts ** config.ns_exponent
    noise /= noise.sum()

    n_examples = sum(len(s) for s in sentences)
    total = max(1, n_examples * config.epochs)
    table = EmbeddingTable(vocab, w_in, {t: freqs[t] for t in vocab})
    step = 0
    for _ in range(config.epochs):
        negs = rng.choice(len(vocab), size=(n_examples, config.negative_samples), p=noise)
        losses = np.empty(n_examples) if track_loss else None
        for i, (ctx, target) in enumerate(_examples(sentences, config.window)):
            lr = config.learning_rate * max(1e-4, 1.0 - step / total)
            row = negs[i]
            loss = cbow_step(w_in, w_out, ctx, target, row[row != target], lr)
            if track_loss:
                losses[i] = loss
            step += 1
        if track_loss:
            table.loss_trace.append(losses)
    if not np.all(np.isfinite(w_in)):
        raise DataError("CBOW training diverged (non-finite vectors); lower the learning rate")
    return table


def emoji_vectors(table: EmbeddingTable, freqs: FrequencyTable, threshold: int) -> dict[str, np.ndarray]:
    """Vectors of emoji tokens occurring at least ``threshold`` times, by (count desc, token)."""
    hits = [(t, freqs[t]) for t in table.vocab if is_emoji(t) and freqs[t] >= threshold]
    if not hits:
        raise DataError(f"no emoji occurs >= {threshold} times")
    hits.sort(key=lambda tc: (-tc[1], tc[0]))
    return {t: table[t].copy() for t, _ in hits}
