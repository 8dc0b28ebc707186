"""Trainable text encoder with a detachable linear head.

The encoder mean-pools token embeddings and applies one tanh projection; the
head is a softmax-linear layer over the task's labels. Training is mini-batch
SGD on cross-entropy with early stopping on dev accuracy, and transfer swaps
the head while keeping (and fine-tuning) the encoder.
"""

from __future__ import annotations

import hashlib
import json
import struct
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from emojitransfer.errors import ConfigError, DataError

UNK = "<unk>"
EMPTY = "<empty>"
_MAGIC = b"EMTCKPT1"


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 10
    patience: int = 3
    min_delta: float = 0.01
    # per-example step 0.1; at batch 32 the 1/(batch*length) scaling of the
    # embedding gradient stalls training before early stopping kicks in
    learning_rate: float = 0.4
    batch_size: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.min_delta < 0:
            raise ConfigError("min_delta must be >= 0")
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise ConfigError("learning_rate must be > 0 and batch_size >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def build_encoder_vocab(token_lists: Iterable[Iterable[str]], min_count: int = 1) -> dict[str, int]:
    """Vocabulary with UNK/EMPTY at 0/1, then tokens by (count desc, token)."""
    counts = Counter(t for toks in token_lists for t in toks)
    kept = sorted((t for t, c in counts.items() if c >= min_count and t not in (UNK, EMPTY)),
                  key=lambda t: (-counts[t], t))
    return {UNK: 0, EMPTY: 1, **{t: i + 2 for i, t in enumerate(kept)}}


def vocab_hash(vocab: Mapping[str, int]) -> str:
    ordered = sorted(vocab, key=vocab.__getitem__)
    return hashlib.sha256("\n".join(ordered).encode()).hexdigest()[:16]


@dataclass
class Encoder:
    vocab: dict[str, int]
    embeddings: np.ndarray
    proj_weight: np.ndarray
    proj_bias: np.ndarray

    @classmethod
    def initialize(cls, vocab: Mapping[str, int], dim: int = 50, hidden: int = 64, seed: int = 0,
                   init_vectors: Mapping[str, np.ndarray] | None = None) -> Encoder:
        if UNK not in vocab or EMPTY not in vocab:
            raise ConfigError("encoder vocab must contain UNK and EMPTY")
        rng = np.random.default_rng([seed, 0])
        emb = rng.uniform(-0.5, 0.5, size=(len(vocab), dim))
        bound = np.sqrt(6.0 / (dim + hidden))
        w = rng.uniform(-bound, bound, size=(dim, hidden))
        if init_vectors:
            for tok, vec in init_vectors.items():
                if tok in vocab:
                    emb[vocab[tok]] = vec
        return cls(dict(vocab), emb, w, np.zeros(hidden))

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    @property
    def hidden(self) -> int:
        return self.proj_weight.shape[1]

    def indices(self, tokens: Sequence[str]) -> np.ndarray:
        if not tokens:
            return np.array([self.vocab[EMPTY]], dtype=np.int64)
        unk = self.vocab[UNK]
        # sorted so the pooled sum, and thus the encoding, is bit-identical under token permutation
        return np.sort(np.array([self.vocab.get(t, unk) for t in tokens], dtype=np.int64))

    def copy(self) -> Encoder:
        return Encoder(dict(self.vocab), self.embeddings.copy(), self.proj_weight.copy(), self.proj_bias.copy())


@dataclass
class Head:
    labels: list[str]
    weight: np.ndarray
    bias: np.ndarray

    @classmethod
    def initialize(cls, labels: Sequence[str], hidden: int, seed: int = 0) -> Head:
        rng = np.random.default_rng([seed, 1])
        return cls(list(labels), rng.uniform(-0.1, 0.1, size=(hidden, len(labels))), np.zeros(len(labels)))

    def copy(self) -> Head:
        return Head(list(self.labels), self.weight.copy(), self.bias.copy())


PARAM_NAMES = ("embeddings", "proj_weight", "proj_bias", "head_weight", "head_bias")


def _params(encoder: Encoder, head: Head) -> dict[str, np.ndarray]:
    return {
        "embeddings": encoder.embeddings,
        "proj_weight": encoder.proj_weight,
        "proj_bias": encoder.proj_bias,
        "head_weight": head.weight,
        "head_bias": head.bias,
    }


def _pool(embeddings: np.ndarray, batch: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lengths = np.array([len(ix) for ix in batch])
    flat = np.concatenate(batch)
    offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    z = np.add.reduceat(embeddings[flat], offsets, axis=0) / lengths[:, None]
    return z, flat, lengths


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def encode(tokens: Sequence[str], encoder: Encoder) -> np.ndarray:
    """Hidden representation: tanh(mean(embeddings) @ W + b). OOV -> UNK, empty -> EMPTY."""
    z = encoder.embeddings[encoder.indices(tokens)].mean(axis=0)
    return np.tanh(z @ encoder.proj_weight + encoder.proj_bias)


def forward(tokens: Sequence[str], encoder: Encoder, head: Head) -> np.ndarray:
    """Probability vector over ``head.labels``."""
    return _softmax(encode(tokens, encoder) @ head.weight + head.bias)


def predict_proba(token_lists: Sequence[Sequence[str]], encoder: Encoder, head: Head) -> np.ndarray:
    batch = [encoder.indices(t) for t in token_lists]
    z, _, _ = _pool(encoder.embeddings, batch)
    a = np.tanh(z @ encoder.proj_weight + encoder.proj_bias)
    return _softmax(a @ head.weight + head.bias)


def predict(token_lists: Sequence[Sequence[str]], encoder: Encoder, head: Head) -> list[str]:
    probs = predict_proba(token_lists, encoder, head)
    return [head.labels[i] for i in probs.argmax(axis=1)]


def loss_and_grads(
    encoder: Encoder, head: Head, batch: Sequence[np.ndarray], targets: np.ndarray, sparse: bool = False
) -> tuple[float, dict]:
    """Mean cross-entropy of a batch and its gradients.

    With ``sparse=True`` the embedding gradient is returned as
    ``(row_indices, row_grads)`` instead of a dense matrix.
    """
    z, flat, lengths = _pool(encoder.embeddings, batch)
    a = np.tanh(z @ encoder.proj_weight + encoder.proj_bias)
    logits = a @ head.weight + head.bias
    probs = _softmax(logits)
    n = len(batch)
    rows = np.arange(n)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    loss = float((log_norm - shifted[rows, targets]).mean())

    d_logits = probs.copy()
    d_logits[rows, targets] -= 1.0
    d_logits /= n
    d_a = d_logits @ head.weight.T
    d_pre = d_a * (1.0 - a * a)
    d_z = d_pre @ encoder.proj_weight.T
    d_rows = np.repeat(d_z / lengths[:, None], lengths, axis=0)
    if sparse:
        d_emb = (flat, d_rows)
    else:
        d_emb = np.zeros_like(encoder.embeddings)
        np.add.at(d_emb, flat, d_rows)
    return loss, {
        "embeddings": d_emb,
        "proj_weight": z.T @ d_pre,
        "proj_bias": d_pre.sum(axis=0),
        "head_weight": a.T @ d_logits,
        "head_bias": d_logits.sum(axis=0),
    }


def sgd_step(encoder: Encoder, head: Head, batch: Sequence[np.ndarray], targets: np.ndarray, lr: float) -> float:
    """One in-place SGD update; returns the pre-update batch loss."""
    loss, grads = loss_and_grads(encoder, head, batch, targets, sparse=True)
    flat, d_rows = grads.pop("embeddings")
    np.add.at(encoder.embeddings, flat, -lr * d_rows)
    params = _params(encoder, head)
    for name, g in grads.items():
        params[name] -= lr * g
    return loss


@dataclass
class Checkpoint:
    encoder: Encoder
    head: Head
    task: str
    config: dict
    best_epoch: int
    epochs_trained: int = 0
    history: list[float] = field(default_factory=list)

    def save(self, path: str | Path) -> None:
        """Binary file: magic, u64 header length, JSON header, little-endian f8 blocks."""
        params = _params(self.encoder, self.head)
        vocab = sorted(self.encoder.vocab, key=self.encoder.vocab.__getitem__)
        header = {
            "task": self.task,
            "config": self.config,
            "vocab": vocab,
            "vocab_hash": vocab_hash(self.encoder.vocab),
            "labels": self.head.labels,
            "best_epoch": self.best_epoch,
            "epochs_trained": self.epochs_trained,
            "history": self.history,
            "blocks": [{"name": k, "shape": list(params[k].shape)} for k in PARAM_NAMES],
        }
        blob = json.dumps(header, sort_keys=True, ensure_ascii=False).encode()
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)
            for k in PARAM_NAMES:
                fh.write(np.ascontiguousarray(params[k], dtype="<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> Checkpoint:
        path = Path(path)
        if not path.exists():
            raise DataError(f"checkpoint {path} not found")
        raw = path.read_bytes()
        if raw[:8] != _MAGIC:
            raise DataError(f"{path} is not a checkpoint file")
        (size,) = struct.unpack("<Q", raw[8:16])
        header = json.loads(raw[16:16 + size].decode())
        pos = 16 + size
        arrays = {}
        for block in header["blocks"]:
            n = int(np.prod(block["shape"]))
            arrays[block["name"]] = (
                np.frombuffer(raw[pos:pos + 8 * n], dtype="<f8").reshape(block["shape"]).astype(np.float64)
            )
            pos += 8 * n
        vocab = {t: i for i, t in enumerate(header["vocab"])}
        if vocab_hash(vocab) != header["vocab_hash"]:
            raise DataError(f"{path}: vocabulary hash mismatch")
        enc = Encoder(vocab, arrays["embeddings"], arrays["proj_weight"], arrays["proj_bias"])
        head = Head(header["labels"], arrays["head_weight"], arrays["head_bias"])
        return cls(enc, head, header["task"], header["config"], header["best_epoch"],
                   header["epochs_trained"], header["history"])


def _index_dataset(ds, encoder: Encoder, labels: Sequence[str]) -> tuple[list[np.ndarray], np.ndarray]:
    pos = {lab: i for i, lab in enumerate(labels)}
    return [encoder.indices(inst.tokens) for inst in ds.instances], np.array([pos[i.label] for i in ds.instances])


def accuracy(encoder: Encoder, head: Head, batch: list[np.ndarray], targets: np.ndarray) -> float:
    z, _, _ = _pool(encoder.embeddings, batch)
    a = np.tanh(z @ encoder.proj_weight + encoder.proj_bias)
    pred = (a @ head.weight + head.bias).argmax(axis=1)
    return float((pred == targets).mean())


def train(train_ds, dev_ds, encoder: Encoder, config: TrainConfig = TrainConfig(), head: Head | None = None) -> Checkpoint:
    """Fit encoder + head, stopping once dev accuracy fails to improve by ``min_delta``
    for ``patience`` consecutive epochs; returns the best-dev-epoch parameters.

    The passed encoder/head are not modified.
    """
    if train_ds is None or dev_ds is None or not len(train_ds) or not len(dev_ds):
        raise DataError("train and dev splits must be non-empty")
    encoder = encoder.copy()
    head = head.copy() if head is not None else Head.initialize(train_ds.labels, encoder.hidden, config.seed)
    if head.weight.shape != (encoder.hidden, len(train_ds.labels)):
        raise ConfigError("head shape does not match encoder hidden size and task labels")
    x_train, y_train = _index_dataset(train_ds, encoder, head.labels)
    x_dev, y_dev = _index_dataset(dev_ds, encoder, head.labels)

    rng = np.random.default_rng([config.seed, 2])
    best_acc = -np.inf
    best = (encoder.copy(), head.copy())
    best_epoch = 0
    history = []
    wait = 0
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(x_train))
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            sgd_step(encoder, head, [x_train[i] for i in idx], y_train[idx], config.learning_rate)
        acc = accuracy(encoder, head, x_dev, y_dev)
        history.append(acc)
        if acc >= best_acc + config.min_delta:
            best_acc, best_epoch, wait = acc, epoch, 0
            best = (encoder.copy(), head.copy())
        else:
            wait += 1
            if wait >= config.patience:
                break
    return Checkpoint(best[0], best[1], train_ds.name, config.to_dict(), best_epoch, epoch, history)


def prepare_transfer(source: Checkpoint, labels: Sequence[str], seed: int = 0) -> tuple[Encoder, Head]:
    """Source encoder parameters plus a fresh head for the target labels (source head discarded)."""
    if source is None:
        raise DataError("transfer needs a source checkpoint")
    encoder = source.encoder.copy()
    return encoder, Head.initialize(labels, encoder.hidden, seed)


def transfer(source: Checkpoint | str | Path, tt_train, tt_dev, config: TrainConfig = TrainConfig()) -> Checkpoint:
    """Fine-tune the source encoder on the target task under a new head."""
    if isinstance(source, (str, Path)):
        source = Checkpoint.load(source)
    encoder, head = prepare_transfer(source, tt_train.labels, config.seed)
    return train(tt_train, tt_dev, encoder, config, head)
