"""Source-task emission, target-task loading and dataset statistics."""

from __future__ import annotations

import csv
import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from emojitransfer.clusters import ClusterSpec, EmojiInventory
from emojitransfer.corpus import (
    Comment,
    clean_texts,
    cleaned_frequencies,
    is_emoji,
    normalize_tokens,
)
from emojitransfer.errors import ConfigError, DataError

HS_LABELS = ("hate", "none")
SA_LABELS = ("positive", "negative", "neutral")


@dataclass(frozen=True)
class Instance:
    tokens: tuple[str, ...]
    label: str
    has_emoji: bool = False


@dataclass
class TaskDataset:
    name: str
    kind: str
    instances: list[Instance]
    labels: list[str]
    split: str = "train"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("source", "target"):
            raise ConfigError(f"kind must be 'source' or 'target', got {self.kind!r}")
        if self.split not in ("train", "dev", "test"):
            raise ConfigError(f"unknown split {self.split!r}")
        if not self.instances:
            raise DataError(f"dataset {self.name!r} ({self.split}) is empty")
        allowed = set(self.labels)
        for i, inst in enumerate(self.instances):
            if inst.label not in allowed:
                raise DataError(f"dataset {self.name!r}: instance {i} label {inst.label!r} not in {self.labels}")
        if self.kind == "source" and any(is_emoji(t) for inst in self.instances for t in inst.tokens):
            raise DataError(f"source dataset {self.name!r} contains emoji tokens")

    def __len__(self) -> int:
        return len(self.instances)

    def subset(self, indices: Iterable[int], split: str) -> TaskDataset:
        return TaskDataset(self.name, self.kind, [self.instances[i] for i in indices], list(self.labels), split,
                           dict(self.provenance))

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps([self.name, self.kind, self.labels, self.split], ensure_ascii=False).encode())
        for inst in self.instances:
            h.update(("\t".join([inst.label, " ".join(inst.tokens)]) + "\n").encode())
        return h.hexdigest()[:16]


def _cap(instances: list[Instance], cap: int | None, seed: int) -> list[Instance]:
    if cap is None:
        return instances
    by_label: dict[str, list[int]] = {}
    for i, inst in enumerate(instances):
        by_label.setdefault(inst.label, []).append(i)
    rng = np.random.default_rng(seed)
    keep = []
    for label in sorted(by_label):
        idx = by_label[label]
        if len(idx) > cap:
            idx = sorted(rng.choice(idx, size=cap, replace=False).tolist())
        keep.extend(idx)
    return [instances[i] for i in sorted(keep)]


def _sorted_by_id(corpus: Iterable[Comment]) -> list[Comment]:
    return sorted(corpus, key=lambda c: c.id)


def emit_ep_dataset(
    corpus: Iterable[Comment],
    inventory: EmojiInventory,
    cap_per_class: int | None = None,
    seed: int = 0,
    name: str = "ep",
) -> TaskDataset:
    """One instance per distinct inventory emoji of each comment, labelled by that emoji."""
    if not len(inventory):
        raise DataError("empty emoji inventory")
    wanted = set(inventory.labels)
    instances = []
    langs = set()
    for c in _sorted_by_id(corpus):
        seen = []
        for e in c.emojis:
            if e in wanted and e not in seen:
                seen.append(e)
        for e in seen:
            instances.append(Instance(c.tokens, e, True))
        if seen:
            langs.add(c.lang)
    instances = _cap(instances, cap_per_class, seed)
    if not instances:
        raise DataError("no comment contains an inventory emoji")
    return TaskDataset(name, "source", instances, inventory.labels, "train",
                       {"generator": "ep", "k": inventory.k, "cap_per_class": cap_per_class, "seed": seed,
                        "languages": sorted(langs)})


def emit_cluster_dataset(
    corpus: Iterable[Comment],
    spec: ClusterSpec,
    cap_per_class: int | None = None,
    seed: int = 0,
    name: str | None = None,
) -> TaskDataset:
    """Label each comment by the cluster of its emojis; conflicting comments are skipped."""
    instances = []
    langs = set()
    for c in _sorted_by_id(corpus):
        classes = {spec.get(e) for e in c.emojis} - {None}
        if len(classes) == 1:
            instances.append(Instance(c.tokens, classes.pop(), True))
            langs.add(c.lang)
    instances = _cap(instances, cap_per_class, seed)
    if not instances:
        raise DataError(f"no comment maps unambiguously onto spec {spec.name!r}")
    return TaskDataset(name or spec.name, "source", instances, list(spec.classes), "train",
                       {"generator": spec.provenance, "spec": spec.name, "spec_digest": spec.digest(),
                        "cap_per_class": cap_per_class, "seed": seed, "languages": sorted(langs)})


@dataclass(frozen=True)
class TargetSchema:
    """How to read a target-task file and normalize its labels."""

    text_column: str | int
    label_column: str | int
    label_map: Mapping[str, str]
    labels: Sequence[str] | None = None
    delimiter: str | None = None
    header: bool = True

    @property
    def label_set(self) -> list[str]:
        if self.labels is not None:
            return list(self.labels)
        return sorted(set(self.label_map.values()))

    @classmethod
    def from_dict(cls, data: Mapping) -> TargetSchema:
        return cls(
            data["text_column"],
            data["label_column"],
            {str(k).strip().lower(): v for k, v in data["label_map"].items()},
            data.get("labels"),
            data.get("delimiter"),
            data.get("header", True),
        )


def _read_rows(path: Path, schema: TargetSchema) -> list[tuple[int, str, str]]:
    delim = schema.delimiter or ("," if path.suffix == ".csv" else "\t")
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter=delim)
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: no rows")
    start = 1 if schema.header else 0
    cols = {name: i for i, name in enumerate(rows[0])} if schema.header else {}

    def col(spec):
        if isinstance(spec, int):
            return spec
        if spec not in cols:
            raise DataError(f"{path}: column {spec!r} not in header {rows[0]}")
        return cols[spec]

    ti, li = col(schema.text_column), col(schema.label_column)
    out = []
    for lineno, row in enumerate(rows[start:], start + 1):
        if not row:
            continue
        if max(ti, li) >= len(row):
            raise DataError(f"{path}:{lineno}: too few columns")
        out.append((lineno, row[ti], row[li]))
    return out


def load_target_task(path: str | Path, schema: TargetSchema, split: str = "train", name: str | None = None) -> TaskDataset:
    """Read a delimited target-task file, normalize labels, preprocess texts (emojis kept)."""
    path = Path(path)
    rows = _read_rows(path, schema)
    labels = []
    for lineno, _, raw in rows:
        key = raw.strip().lower()
        if key not in schema.label_map:
            raise DataError(f"{path}:{lineno}: unknown label {raw!r}")
        labels.append(schema.label_map[key])
    return target_dataset_from_texts([t for _, t, _ in rows], labels, schema.label_set,
                                     name or path.stem, split, {"path": path.name})


def target_dataset_from_texts(
    texts: Sequence[str],
    labels: Sequence[str],
    label_set: Sequence[str],
    name: str,
    split: str = "train",
    provenance: Mapping | None = None,
) -> TaskDataset:
    cleaned = clean_texts(texts)
    freqs = cleaned_frequencies(cleaned)
    instances = []
    for toks, label in zip(cleaned, labels):
        toks = tuple(normalize_tokens(toks, freqs))
        instances.append(Instance(toks, label, any(is_emoji(t) for t in toks)))
    return TaskDataset(name, "target", instances, list(label_set), split, dict(provenance or {}))


@dataclass(frozen=True)
class DatasetStats:
    label_counts: dict[str, int]
    size: int
    minority_fraction: float
    emoji_content: float

    def to_dict(self) -> dict:
        return {
            "label_counts": dict(self.label_counts),
            "size": self.size,
            "minority_fraction": self.minority_fraction,
            "emoji_content": self.emoji_content,
        }


def dataset_stats(ds: TaskDataset) -> DatasetStats:
    """Label counts, minority-class share and share of emoji-bearing instances.

    The minority share is taken over labels that occur at least once.
    """
    counts = Counter(inst.label for inst in ds.instances)
    label_counts = {lab: counts.get(lab, 0) for lab in ds.labels}
    n = len(ds.instances)
    present = [c for c in label_counts.values() if c > 0]
    return DatasetStats(
        label_counts,
        n,
        min(present) / n,
        sum(inst.has_emoji for inst in ds.instances) / n,
    )


def split_train_dev(ds: TaskDataset, dev_fraction: float = 0.1, seed: int = 0) -> tuple[TaskDataset, TaskDataset]:
    """Stratified, seeded split; each label keeps at least one instance on each side."""
    if not 0 < dev_fraction < 1:
        raise ConfigError("dev_fraction must lie in (0, 1)")
    by_label: dict[str, list[int]] = {}
    for i, inst in enumerate(ds.instances):
        by_label.setdefault(inst.label, []).append(i)
    small = [lab for lab, idx in by_label.items() if len(idx) < 2]
    if small:
        raise DataError(f"labels {sorted(small)} have fewer than 2 instances; cannot stratify")

    labels = sorted(by_label)
    exact = np.array([len(by_label[lab]) * dev_fraction for lab in labels])
    alloc = np.floor(exact).astype(int)
    remaining = int(round(len(ds) * dev_fraction)) - alloc.sum()
    order = sorted(range(len(labels)), key=lambda j: (-(exact[j] - alloc[j]), labels[j]))
    for j in order[: max(0, remaining)]:
        alloc[j] += 1
    rng = np.random.default_rng(seed)
    dev_idx = []
    for lab, n_dev in zip(labels, alloc):
        idx = by_label[lab]
        n_dev = min(max(int(n_dev), 1), len(idx) - 1)
        dev_idx.extend(rng.permutation(idx)[:n_dev].tolist())
    dev_set = set(dev_idx)
    train_idx = [i for i in range(len(ds)) if i not in dev_set]
    return ds.subset(train_idx, "train"), ds.subset(sorted(dev_set), "dev")


def save_dataset(ds: TaskDataset, path: str | Path) -> Path:
    """Write ``label<TAB>tokens`` rows plus a JSON manifest next to them."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for inst in ds.instances:
            fh.write(f"{inst.label}\t{' '.join(inst.tokens)}\n")
    manifest = {
        "name": ds.name,
        "kind": ds.kind,
        "labels": list(ds.labels),
        "split": ds.split,
        "stats": dataset_stats(ds).to_dict(),
        "provenance": ds.provenance,
        "digest": ds.digest(),
    }
    mpath = manifest_path(path)
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    return mpath


def manifest_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".manifest.json")


def load_dataset(path: str | Path) -> TaskDataset:
    path = Path(path)
    manifest = json.loads(manifest_path(path).read_text(encoding="utf-8"))
    instances = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            label, _, text = line.partition("\t")
            toks = tuple(text.split(" ")) if text else ()
            has_emoji = manifest["kind"] == "source" or any(is_emoji(t) for t in toks)
            instances.append(Instance(toks, label, has_emoji))
    return TaskDataset(manifest["name"], manifest["kind"], instances, manifest["labels"], manifest["split"],
                       manifest.get("provenance", {}))
