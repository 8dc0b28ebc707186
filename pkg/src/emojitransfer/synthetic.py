"""Synthetic comment corpora and target tasks with known emoji semantics.

Comments in the "social" register mix filler words with words from a
polarity lexicon and carry emojis of the same polarity. Target-task
instances without emojis are written in a separate "formal" register whose
sentiment words never occur in the source corpus.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from emojitransfer.corpus import is_emoji

POSITIVE_EMOJIS = ("😍", "😊", "😂", "🥰", "😁", "👍")
NEGATIVE_EMOJIS = ("😡", "😢", "😠", "😭", "👎", "💔")
NEUTRAL_EMOJIS = ("🤔", "👀", "📷", "🌍", "⚽", "🎵")
EMOJI_SETS = {"positive": POSITIVE_EMOJIS, "negative": NEGATIVE_EMOJIS, "neutral": NEUTRAL_EMOJIS}
# rarely used pictographs with no polarity, for long-tailed emoji distributions
TAIL_EMOJIS = tuple(
    ch for ch in map(chr, range(0x1F300, 0x1F5FF))
    if is_emoji(ch) and ch not in POSITIVE_EMOJIS + NEGATIVE_EMOJIS + NEUTRAL_EMOJIS
)

_ONSETS = "b c d f g h j k l m n p r s t v w z bl br dr fl gr kr pl pr sk sl sn st tr".split()
_VOWELS = "a e i o u ai ei ou".split()


def _pseudo_words(rng: np.random.Generator, n: int, taken: set) -> list[str]:
    words = []
    while len(words) < n:
        n_syl = int(rng.integers(2, 4))
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(n_syl))
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


@dataclass(frozen=True)
class Lexicons:
    social: dict
    formal: dict
    filler: tuple
    slurs: tuple

    @classmethod
    def build(cls, seed: int = 7, size: int = 150, n_filler: int = 400, n_slurs: int = 20) -> Lexicons:
        rng = np.random.default_rng(seed)
        taken: set = set()
        social = {p: tuple(_pseudo_words(rng, size, taken)) for p in ("positive", "negative")}
        formal = {p: tuple(_pseudo_words(rng, size, taken)) for p in ("positive", "negative")}
        filler = tuple(_pseudo_words(rng, n_filler, taken))
        slurs = tuple(_pseudo_words(rng, n_slurs, taken))
        return cls(social, formal, filler, slurs)


def _sentence(rng, lex_words, filler, length, density) -> list[str]:
    words = []
    for _ in range(length):
        if lex_words and rng.random() < density:
            words.append(lex_words[rng.integers(len(lex_words))])
        else:
            words.append(filler[rng.integers(len(filler))])
    return words


def _decorate(rng, words: list[str]) -> str:
    # surface noise the preprocessing has to undo
    words = list(words)
    if rng.random() < 0.1:
        words.insert(0, "@user" + str(int(rng.integers(100))))
    if rng.random() < 0.05:
        words.insert(0, "RT")
    if rng.random() < 0.1 and words:
        i = int(rng.integers(len(words)))
        words[i] = words[i].capitalize()
    if rng.random() < 0.15:
        words.append("!" * int(rng.integers(1, 4)))
    return " ".join(words)


def source_comment(rng, lex: Lexicons, polarity: str, emoji_rate: float = 0.7, density: float = 0.3,
                   slur_rate: float = 0.0, emoji_noise: float = 0.1) -> str:
    length = int(rng.integers(5, 11))
    words = _sentence(rng, lex.social.get(polarity, ()), lex.filler, length, density)
    if slur_rate and rng.random() < slur_rate:
        words.insert(int(rng.integers(len(words) + 1)), lex.slurs[rng.integers(len(lex.slurs))])
    text = _decorate(rng, words)
    if rng.random() < emoji_rate:
        pool = EMOJI_SETS[polarity]
        if rng.random() < emoji_noise:
            pool = EMOJI_SETS[rng.choice(sorted(EMOJI_SETS))]
        n = 1 + int(rng.random() < 0.3)
        text += " " + "".join(pool[rng.integers(len(pool))] for _ in range(n))
    return text


def generate_source_corpus(n: int, seed: int = 0, lang: str = "xx", lex: Lexicons | None = None,
                           polarity_weights: Sequence[float] = (0.4, 0.4, 0.2), emoji_rate: float = 0.7,
                           slur_rates: Sequence[float] = (0.02, 0.3, 0.05)) -> list[dict]:
    """``{"id", "text", "lang"}`` records; slur rates are per (positive, negative, neutral)."""
    lex = lex or Lexicons.build()
    rng = np.random.default_rng(seed)
    polarities = ("positive", "negative", "neutral")
    out = []
    for i in range(n):
        k = int(rng.choice(3, p=np.asarray(polarity_weights) / np.sum(polarity_weights)))
        text = source_comment(rng, lex, polarities[k], emoji_rate, slur_rate=slur_rates[k])
        out.append({"id": f"{lang}-{i:07d}", "text": text, "lang": lang})
    return out


def generate_target_task(n: int, emoji_content: float, minority_fraction: float = 0.5, seed: int = 0,
                         lex: Lexicons | None = None, labels: Sequence[str] = ("positive", "negative"),
                         label_noise: float = 0.15, density: float = 0.2,
                         emoji_label_rate: float = 0.5, tail_rate: float = 0.0) -> list[tuple[str, str]]:
    """(text, label) pairs for a binary sentiment task.

    ``labels[1]`` is the minority class. Emoji-bearing instances use the social
    register and one emoji that matches the text polarity with probability
    ``emoji_label_rate`` (a neutral emoji otherwise); the rest use the formal
    register. With probability ``label_noise`` the text polarity contradicts
    the label. With probability ``tail_rate`` an emoji-bearing instance
    instead gets a uniformly drawn pictograph from :data:`TAIL_EMOJIS`.
    """
    lex = lex or Lexicons.build()
    rng = np.random.default_rng(seed)
    major, minor = labels
    n_minor = int(round(n * minority_fraction))
    ys = np.array([minor] * n_minor + [major] * (n - n_minor))
    rng.shuffle(ys)
    out = []
    for y in ys:
        polarity = y if rng.random() >= label_noise else (minor if y == major else major)
        length = int(rng.integers(6, 13))
        if rng.random() < emoji_content:
            words = _sentence(rng, lex.social[polarity], lex.filler, length, density)
            pool = EMOJI_SETS[polarity] if rng.random() < emoji_label_rate else NEUTRAL_EMOJIS
            if tail_rate and rng.random() < tail_rate:
                pool = TAIL_EMOJIS
            text = _decorate(rng, words) + " " + pool[rng.integers(len(pool))]
        else:
            text = _decorate(rng, _sentence(rng, lex.formal[polarity], lex.filler, length, density))
        out.append((text, str(y)))
    return out


def write_jsonl(records: Sequence[dict], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def write_tt(rows: Sequence[tuple[str, str]], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["text", "label"])
        w.writerows(rows)


def write_fixtures(out_dir: str | Path, n_source: int = 4000, n_tt: int = 300, seed: int = 0,
                   languages: Sequence[str] = ("de", "pl")) -> Path:
    """Write a small multilingual fixture set and a matching experiment config.

    Returns the config path. The target task is balanced with high emoji
    content; k-means clusters are named through anchor emojis.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lex = Lexicons.build()
    corpora, lexicons = {}, {}
    for i, lang in enumerate(languages):
        recs = generate_source_corpus(n_source, seed + i, lang, lex)
        p = out / f"tw-{lang}.jsonl"
        write_jsonl(recs, p)
        corpora[lang] = p.name
        lp = out / f"slurs.{lang}.txt"
        lp.write_text("\n".join(lex.slurs) + "\n", encoding="utf-8")
        lexicons[lang] = lp.name
    rows = generate_target_task(2 * n_tt, 0.6, 0.5, seed + 100, lex, labels=("positive", "negative"))
    write_tt(rows[:n_tt], out / "sa-syn.train.tsv")
    write_tt(rows[n_tt:], out / "sa-syn.test.tsv")
    config = {
        "corpora": corpora,
        "lexicons": lexicons,
        "st_languages": list(languages),
        "source_tasks": ["ep", "kmeans2", "kmeans3", "pmi-swear", "pmi-target"],
        "embedding": {"dim": 30, "window": 5, "epochs": 3, "min_count": 2, "emoji_min_count": 20},
        "clusters": {
            "ep_k": 64,
            "kmeans_k": 6,
            "kmeans_seed": 0,
            "cluster_anchors": {
                "happy": list(POSITIVE_EMOJIS),
                "unhappy": list(NEGATIVE_EMOJIS),
                "other": list(NEUTRAL_EMOJIS),
            },
            "pmi_alpha": 1.0,
            "swear_min_count": 5,
        },
        "cap_per_class": 500,
        "target_tasks": [
            {
                "name": "sa-syn",
                "train": "sa-syn.train.tsv",
                "test": "sa-syn.test.tsv",
                "schema": {
                    "text_column": "text",
                    "label_column": "label",
                    "label_map": {"positive": "positive", "negative": "negative"},
                    "labels": ["positive", "negative"],
                },
            }
        ],
        "train": {"max_epochs": 5, "patience": 2},
        "encoder": {"dim": 20, "hidden": 16},
        "n_seeds": 3,
        "master_seed": 0,
        "output_dir": "out",
    }
    cfg_path = out / "experiment.json"
    cfg_path.write_text(json.dumps(config, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return cfg_path
