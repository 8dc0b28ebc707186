"""Emoji label schemes for the source tasks.

* ``top_k_emojis``: the emoji-prediction inventory.
* ``kmeans`` + ``merge_clusters``: unsupervised clusters over emoji vectors,
  merged by a curated map into positive/neutral/negative classes.
* ``build_swear_clusters`` / ``build_target_clusters``: PMI-based clusters
  against slur-bearing comments or target-task labels.
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

import numpy as np

from emojitransfer.corpus import Comment, FrequencyTable, SlurLexicon, contains_slur, is_emoji
from emojitransfer.errors import ConfigError, DataError

if TYPE_CHECKING:
    from emojitransfer.embeddings import EmbeddingTable
    from emojitransfer.tasks import TaskDataset

PROVENANCES = ("kmeans", "pmi-swear", "pmi-target")

# Curated naming of the six k-means clusters and their merge into classes.
KMEANS3_MERGE = {
    "happy": "positive",
    "fun": "positive",
    "love": "positive",
    "other": "neutral",
    "nature": "neutral",
    "unhappy": "negative",
}
KMEANS2_MERGE = {**KMEANS3_MERGE, "other": None, "nature": None}

PMI_FORMULA = (
    "pmi(e,c) = log2(((n(e,c)+a) * (N + a*|E|*|C|)) / ((n(e) + a*|C|) * (n(c) + a*|E|)))"
)


@dataclass(frozen=True)
class EmojiInventory:
    emojis: tuple[tuple[str, int], ...]
    k: int

    @property
    def labels(self) -> list[str]:
        return [e for e, _ in self.emojis]

    @property
    def truncated(self) -> bool:
        """Fewer distinct emojis than requested."""
        return len(self.emojis) < self.k

    def __contains__(self, emoji: str) -> bool:
        return emoji in self.labels

    def __len__(self) -> int:
        return len(self.emojis)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "emojis": [[e, c] for e, c in self.emojis],
            "metadata": {"truncated": self.truncated},
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> EmojiInventory:
        return cls(tuple((e, int(c)) for e, c in data["emojis"]), int(data["k"]))


def top_k_emojis(freqs: FrequencyTable, k: int = 64) -> EmojiInventory:
    if k < 1:
        raise ConfigError("k must be >= 1")
    counts = freqs.emoji_counts()
    if not counts:
        raise DataError("corpus contains no emoji")
    ranked = sorted(counts.items(), key=lambda ec: (-ec[1], ec[0]))
    return EmojiInventory(tuple(ranked[:k]), k)


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignment: dict[str, int]
    inertia: float
    seed: int
    n_iter: int = 0
    inertia_history: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def members(self, index: int) -> list[str]:
        return [e for e, c in self.assignment.items() if c == index]

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "seed": self.seed,
            "n_iter": self.n_iter,
            "inertia": self.inertia,
            "inertia_history": self.inertia_history,
            "assignment": self.assignment,
            "centroids": self.centroids.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> KMeansResult:
        return cls(
            np.array(data["centroids"], dtype=np.float64),
            {e: int(c) for e, c in data["assignment"].items()},
            float(data["inertia"]),
            int(data["seed"]),
            int(data.get("n_iter", 0)),
            list(data.get("inertia_history", [])),
        )


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    chosen = [int(rng.integers(n))]
    d2 = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            # all remaining points coincide with a centre
            rest = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(rest))
        chosen.append(idx)
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return x[chosen].copy()


def kmeans(points: Mapping[str, np.ndarray], k: int, seed: int = 0, max_iters: int = 300) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    Distance ties go to the lowest centroid index; an emptied cluster keeps
    its previous centroid. Stops once the assignment no longer changes.
    """
    keys = list(points)
    if len(keys) < k:
        raise DataError(f"need at least k={k} points, got {len(keys)}")
    if k < 1:
        raise ConfigError("k must be >= 1")
    x = np.array([np.asarray(points[e], dtype=np.float64) for e in keys])
    if x.ndim != 2:
        raise DataError("all vectors must share one dimension")

    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(x, k, rng)
    labels = None
    history = []
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        d2 = _sq_dists(x, centroids)
        new = d2.argmin(axis=1)
        history.append(float(d2[np.arange(len(x)), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            mask = labels == j
            if mask.any():
                centroids[j] = x[mask].mean(axis=0)
    else:
        # max_iters exhausted right after an update: re-assign to the moved centroids
        d2 = _sq_dists(x, centroids)
        labels = d2.argmin(axis=1)
        history.append(float(d2[np.arange(len(x)), labels].sum()))
    d2 = _sq_dists(x, centroids)
    inertia = float(d2[np.arange(len(x)), labels].sum())
    return KMeansResult(
        centroids, {e: int(c) for e, c in zip(keys, labels)}, inertia, seed, n_iter, history
    )


@dataclass
class ClusterSpec:
    name: str
    provenance: str
    classes: list[str]
    mapping: dict[str, str]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ConfigError(f"unknown provenance {self.provenance!r}")
        stray = {c for c in self.mapping.values() if c not in self.classes}
        if stray:
            raise DataError(f"classes {sorted(stray)} not declared in cluster spec {self.name!r}")
        empty = [c for c in self.classes if c not in set(self.mapping.values())]
        if empty:
            self.metadata.setdefault("empty_classes", empty)

    def __getitem__(self, emoji: str) -> str:
        return self.mapping[emoji]

    def get(self, emoji: str) -> str | None:
        return self.mapping.get(emoji)

    def sizes(self) -> dict[str, int]:
        counts = Counter(self.mapping.values())
        return {c: counts.get(c, 0) for c in self.classes}

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "provenance": self.provenance,
            "classes": list(self.classes),
            "mapping": dict(sorted(self.mapping.items())),
            "metadata": self.metadata,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8"
        )

    @classmethod
    def from_dict(cls, data: Mapping) -> ClusterSpec:
        return cls(data["name"], data["provenance"], list(data["classes"]), dict(data["mapping"]),
                   dict(data.get("metadata", {})))

    @classmethod
    def load(cls, path: str | Path) -> ClusterSpec:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def merge_clusters(result: KMeansResult, merge_map: Mapping[int, str | None], name: str = "kmeans") -> ClusterSpec:
    """Collapse raw clusters into classes; a ``None`` target drops the cluster."""
    merge_map = {int(i): c for i, c in merge_map.items()}
    bad = sorted(i for i in merge_map if not 0 <= i < result.k)
    if bad:
        raise ConfigError(f"merge map references nonexistent clusters {bad}")
    missing = sorted(set(range(result.k)) - set(merge_map))
    if missing:
        raise ConfigError(f"merge map neither maps nor drops clusters {missing}")
    classes = sorted({c for c in merge_map.values() if c is not None})
    if not classes:
        raise ConfigError("merge map drops every cluster")
    mapping = {e: merge_map[i] for e, i in result.assignment.items() if merge_map[i] is not None}
    return ClusterSpec(
        name,
        "kmeans",
        classes,
        mapping,
        {
            "merge_map": {str(i): merge_map[i] for i in sorted(merge_map)},
            "k": result.k,
            "seed": result.seed,
            "inertia": result.inertia,
        },
    )


def name_clusters(result: KMeansResult, anchors: Mapping[str, Iterable[str]]) -> dict[int, str]:
    """Name clusters from hand-labelled anchor emojis (majority vote per cluster).

    Clusters holding no anchor stay unnamed; a tied vote is an error so the
    curator has to resolve it.
    """
    votes: dict[int, Counter] = {}
    for name, emojis in anchors.items():
        for e in emojis:
            if e in result.assignment:
                votes.setdefault(result.assignment[e], Counter())[name] += 1
    names = {}
    for idx, counter in sorted(votes.items()):
        ranked = counter.most_common()
        if len(ranked) > 1 and ranked[0][1] == ranked[1][1]:
            raise ConfigError(f"cluster {idx} has tied anchor votes {dict(counter)}")
        names[idx] = ranked[0][0]
    return names


def named_merge_map(
    cluster_names: Mapping[int, str], name_merge: Mapping[str, str | None], k: int, drop_unnamed: bool = False
) -> dict[int, str | None]:
    """Compose cluster index -> name -> class into an index merge map."""
    out = {}
    for i in range(k):
        name = cluster_names.get(i)
        if name is None:
            if not drop_unnamed:
                raise ConfigError(f"cluster {i} has no name; name it or set drop_unnamed")
            out[i] = None
        elif name not in name_merge:
            raise ConfigError(f"cluster name {name!r} missing from merge map")
        else:
            out[i] = name_merge[name]
    return out


def cluster_summaries(result: KMeansResult, table: EmbeddingTable, topn: int = 10) -> list[dict]:
    """Members and nearest vocabulary tokens per centroid, to support manual naming."""
    return [
        {
            "cluster": j,
            "members": result.members(j),
            "nearest": [t for t, _ in table.most_similar(result.centroids[j], topn)],
        }
        for j in range(result.k)
    ]


@dataclass
class PmiTable:
    """Joint emoji x class counts with add-alpha smoothed base-2 PMI."""

    emojis: list[str]
    classes: list[str]
    joint: np.ndarray
    alpha: float = 1.0

    def __post_init__(self):
        self.joint = np.asarray(self.joint, dtype=np.float64)
        if self.joint.shape != (len(self.emojis), len(self.classes)):
            raise DataError("joint count shape does not match emojis x classes")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")

    @property
    def n_emoji(self) -> np.ndarray:
        return self.joint.sum(axis=1)

    @property
    def n_class(self) -> np.ndarray:
        return self.joint.sum(axis=0)

    @property
    def total(self) -> float:
        return float(self.joint.sum())

    @property
    def values(self) -> np.ndarray:
        a = self.alpha
        n_e, n_c = len(self.emojis), len(self.classes)
        num = (self.joint + a) * (self.total + a * n_e * n_c)
        den = np.outer(self.n_emoji + a * n_c, self.n_class + a * n_e)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.log2(num / den)
        # unsmoothed zero cells: log of zero probability
        out[(self.joint + a) == 0] = -np.inf
        return out

    def row(self, emoji: str) -> dict[str, float]:
        vals = self.values[self.emojis.index(emoji)]
        return dict(zip(self.classes, map(float, vals)))

    def metadata(self) -> dict:
        return {"formula": PMI_FORMULA, "alpha": self.alpha, "log_base": 2, "total": self.total}


def pmi(joint: Mapping[str, Mapping[str, int]] | np.ndarray, emojis: Sequence[str] | None = None,
        classes: Sequence[str] | None = None, alpha: float = 1.0) -> PmiTable:
    """Build a :class:`PmiTable` from nested ``{emoji: {class: count}}`` or an array."""
    if isinstance(joint, Mapping):
        emojis = list(emojis) if emojis is not None else sorted(joint)
        if classes is None:
            classes = sorted({c for row in joint.values() for c in row})
        arr = np.array([[joint.get(e, {}).get(c, 0) for c in classes] for e in emojis], dtype=np.float64)
    else:
        arr = np.asarray(joint, dtype=np.float64)
    table = PmiTable(list(emojis), list(classes), arr, alpha)
    if table.total <= 0:
        raise DataError("PMI needs at least one co-occurrence (N > 0)")
    return table


def comment_level_joint(pairs: Iterable[tuple[Iterable[str], str]]) -> dict[str, Counter]:
    """n(e, c): number of units with class c containing emoji e at least once."""
    joint: dict[str, Counter] = {}
    for emojis, cls in pairs:
        for e in set(emojis):
            joint.setdefault(e, Counter())[cls] += 1
    return joint


def build_swear_clusters(
    corpus: Iterable[Comment],
    lexicon: SlurLexicon,
    min_emoji_count: int = 1,
    alpha: float = 1.0,
    freqs: FrequencyTable | None = None,
    name: str = "pmi-swear",
) -> ClusterSpec:
    """Assign each emoji to ``slur`` iff its PMI with slur-bearing comments is higher.

    Ties go to ``neutral``.
    """
    pairs = []
    n_slur = n_comments = 0
    langs = set()
    for c in corpus:
        flagged = contains_slur(c, lexicon, freqs)
        n_slur += flagged
        n_comments += 1
        langs.add(c.lang)
        if c.emojis:
            pairs.append((c.emojis, "slur" if flagged else "neutral"))
    if n_slur == 0:
        raise DataError("no comment contains a lexicon slur; lexicon/corpus pairing unusable for PMI-Swear")
    joint = comment_level_joint(pairs)
    classes = ["neutral", "slur"]
    table = pmi(joint, sorted(joint), classes, alpha)
    values = table.values
    mapping = {}
    for i, e in enumerate(table.emojis):
        if table.n_emoji[i] < min_emoji_count:
            continue
        mapping[e] = "slur" if values[i, 1] > values[i, 0] else "neutral"
    if not mapping:
        raise DataError(f"no emoji reaches min_emoji_count={min_emoji_count}")
    return ClusterSpec(
        name,
        "pmi-swear",
        ["slur", "neutral"],
        mapping,
        {
            **table.metadata(),
            "min_emoji_count": min_emoji_count,
            "slur_comments": n_slur,
            "comments": n_comments,
            "languages": sorted(langs),
            "tie_rule": "neutral",
        },
    )


def build_target_clusters(tt_train: TaskDataset, alpha: float = 1.0, name: str | None = None) -> ClusterSpec:
    """Assign each emoji of the target-task training data to its highest-PMI label.

    Ties go to the lexicographically first label.
    """
    pairs = [([t for t in inst.tokens if is_emoji(t)], inst.label) for inst in tt_train.instances]
    joint = comment_level_joint((em, lab) for em, lab in pairs if em)
    if not joint:
        raise DataError(f"target task {tt_train.name!r} has no emoji in its training data")
    labels = list(tt_train.labels)
    table = pmi(joint, sorted(joint), labels, alpha)
    values = table.values
    order = sorted(range(len(labels)), key=labels.__getitem__)
    mapping = {}
    for i, e in enumerate(table.emojis):
        best = order[0]
        for j in order[1:]:
            if values[i, j] > values[i, best]:
                best = j
        mapping[e] = labels[best]
    return ClusterSpec(
        name or f"pmi-target-{tt_train.name}",
        "pmi-target",
        labels,
        mapping,
        {**table.metadata(), "target_task": tt_train.name, "tie_rule": "lexicographic-first"},
    )
