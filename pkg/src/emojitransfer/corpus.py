"""Comment ingestion and preprocessing.

Pipeline per comment: ``tokenize`` -> ``clean`` -> ``normalize_repeats`` (needs
corpus frequencies, hence two passes) -> ``split_emojis``.
"""

from __future__ import annotations

import gzip
import io
import json
import logging
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import regex

from emojitransfer.errors import DataError, UnknownLanguageError

log = logging.getLogger(__name__)

_PICTO = r"\p{Extended_Pictographic}"

_TOKEN_RE = regex.compile(
    rf"""
    (?P<url>(?:https?://|www\.)[^\s{_PICTO}]+)
  | (?P<mention>@\w+)
  | (?P<hashtag>\#\w+)
  | (?P<word>\w+(?:['’]\w+)*)
  | (?P<emoji>(?={_PICTO})\X)
  | (?P<other>[^\s{_PICTO}])
    """,
    regex.VERBOSE | regex.V1,
)
_PICTO_RE = regex.compile(_PICTO)
_RUN_RE = regex.compile(r"(.)\1{2,}", regex.DOTALL)


def is_emoji(token: str) -> bool:
    """True iff the first codepoint of ``token`` is Extended_Pictographic."""
    return bool(token) and _PICTO_RE.match(token) is not None


def has_pictographic(token: str) -> bool:
    return _PICTO_RE.search(token) is not None


def tokenize(text: str) -> list[str]:
    """Split ``text`` into lowercased word, punctuation, URL and emoji tokens.

    Every emoji grapheme cluster (ZWJ sequences, skin-tone modifiers,
    variation selectors) becomes a single token and keeps its case.
    """
    tokens = []
    for m in _TOKEN_RE.finditer(text):
        tok = m.group()
        tokens.append(tok if m.lastgroup == "emoji" else tok.lower())
    return tokens


def _is_punct(token: str) -> bool:
    return all(unicodedata.category(ch)[0] in "PS" or unicodedata.category(ch) == "Cf" for ch in token)


def clean(tokens: Iterable[str]) -> list[str]:
    """Drop mentions, the leading retweet marker and punctuation; unwrap hashtags."""
    out = []
    for tok in tokens:
        if is_emoji(tok):
            out.append(tok)
            continue
        tok = tok.lstrip("#")
        if not tok or tok.startswith("@") or _is_punct(tok):
            continue
        out.append(tok)
    # "rt" may only surface at the front once mentions are gone ("@a rt ..."),
    # so strip every leading marker to keep clean() idempotent.
    start = 0
    while start < len(out) and out[start] == "rt":
        start += 1
    return out[start:]


@dataclass
class FrequencyTable:
    """Token counts plus the comment-level emoji statistics of a corpus."""

    counts: Counter = field(default_factory=Counter)
    total_tokens: int = 0
    total_comments: int = 0
    comments_with_emoji: int = 0

    def __add__(self, other: FrequencyTable) -> FrequencyTable:
        return FrequencyTable(
            counts=self.counts + other.counts,
            total_tokens=self.total_tokens + other.total_tokens,
            total_comments=self.total_comments + other.total_comments,
            comments_with_emoji=self.comments_with_emoji + other.comments_with_emoji,
        )

    def __getitem__(self, token: str) -> int:
        return self.counts.get(token, 0)

    @property
    def emoji_ratio(self) -> float:
        return self.comments_with_emoji / self.total_comments if self.total_comments else 0.0

    def emoji_counts(self) -> dict[str, int]:
        return {t: c for t, c in self.counts.items() if is_emoji(t)}

    def add_tokens(self, tokens: Iterable[str], has_emoji: bool | None = None) -> None:
        tokens = list(tokens)
        self.counts.update(tokens)
        self.total_tokens += len(tokens)
        self.total_comments += 1
        if has_emoji is None:
            has_emoji = any(is_emoji(t) for t in tokens)
        self.comments_with_emoji += int(has_emoji)

    def to_dict(self) -> dict:
        return {
            "total_tokens": self.total_tokens,
            "total_comments": self.total_comments,
            "comments_with_emoji": self.comments_with_emoji,
            "counts": dict(sorted(self.counts.items(), key=lambda kv: (-kv[1], kv[0]))),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> FrequencyTable:
        return cls(
            counts=Counter(data["counts"]),
            total_tokens=data["total_tokens"],
            total_comments=data["total_comments"],
            comments_with_emoji=data["comments_with_emoji"],
        )


def normalize_repeats(token: str, freqs: FrequencyTable) -> str:
    """Shorten character runs of length >= 3 to the more frequent spelling.

    Two candidates are built, with every long run cut to two characters or
    to one. The more frequent candidate wins; ties (including both unseen)
    go to the two-character form.
    """
    if not _RUN_RE.search(token):
        return token
    double = _RUN_RE.sub(r"\1\1", token)
    single = _RUN_RE.sub(r"\1", token)
    return single if freqs[single] > freqs[double] else double


def split_emojis(tokens: Iterable[str]) -> tuple[list[str], list[str]]:
    text, emojis = [], []
    for tok in tokens:
        (emojis if is_emoji(tok) else text).append(tok)
    return text, emojis


@dataclass(frozen=True)
class RawComment:
    id: str
    text: str
    lang: str

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise DataError(f"comment {self.id!r}: empty text")


@dataclass(frozen=True)
class Comment:
    """A preprocessed comment: emoji-free text tokens plus its emojis in order."""

    id: str
    tokens: tuple[str, ...]
    emojis: tuple[str, ...]
    lang: str

    @property
    def has_emoji(self) -> bool:
        return bool(self.emojis)

    def to_json(self) -> str:
        return json.dumps(
            {"id": self.id, "tokens": list(self.tokens), "emojis": list(self.emojis), "lang": self.lang},
            ensure_ascii=False,
        )

    @classmethod
    def from_dict(cls, data: Mapping) -> Comment:
        return cls(data["id"], tuple(data["tokens"]), tuple(data["emojis"]), data["lang"])


def build_frequency_table(corpus: Iterable[Comment]) -> FrequencyTable:
    """Exact token (text and emoji) counts over preprocessed comments."""
    table = FrequencyTable()
    for c in corpus:
        table.add_tokens([*c.tokens, *c.emojis], has_emoji=c.has_emoji)
    return table


def clean_texts(texts: Iterable[str]) -> list[list[str]]:
    return [clean(tokenize(t)) for t in texts]


def normalize_tokens(tokens: Iterable[str], freqs: FrequencyTable) -> list[str]:
    return [t if is_emoji(t) else normalize_repeats(t, freqs) for t in tokens]


def cleaned_frequencies(token_lists: Iterable[Iterable[str]]) -> FrequencyTable:
    table = FrequencyTable()
    for toks in token_lists:
        table.add_tokens(toks)
    return table


def preprocess(raws: Iterable[RawComment]) -> list[Comment]:
    """Run the full two-pass pipeline over a corpus.

    Spelling normalization uses frequencies of the cleaned corpus itself.
    """
    raws = list(raws)
    cleaned = clean_texts(r.text for r in raws)
    freqs = cleaned_frequencies(cleaned)
    out = []
    for raw, toks in zip(raws, cleaned):
        text, emojis = split_emojis(normalize_tokens(toks, freqs))
        out.append(Comment(raw.id, tuple(text), tuple(emojis), raw.lang))
    return out


@dataclass(frozen=True)
class SlurLexicon:
    """Lowercased slur terms per language tag."""

    terms: Mapping[str, frozenset]

    def __post_init__(self):
        for lang, terms in self.terms.items():
            if not terms:
                raise DataError(f"slur lexicon for {lang!r} is empty")
            bad = [t for t in terms if not t or any(ch.isspace() for ch in t)]
            if bad:
                raise DataError(f"slur lexicon for {lang!r} has terms with whitespace: {bad[:3]}")

    @property
    def languages(self) -> list[str]:
        return sorted(self.terms)

    def for_lang(self, lang: str) -> frozenset:
        try:
            return self.terms[lang]
        except KeyError:
            raise UnknownLanguageError(f"no slur lexicon configured for language {lang!r}") from None


def lexicon_lang_from_path(path: str | Path) -> str:
    """``slurs.de.txt`` / ``de.txt`` -> ``de``."""
    parts = Path(path).name.split(".")
    return parts[-2] if len(parts) >= 2 else parts[0]


def read_lexicon_terms(path: str | Path) -> frozenset:
    terms = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        term = line.strip().lower()
        if not term or term.startswith("#"):
            continue
        if any(ch.isspace() for ch in term):
            log.warning("%s: skipping multi-word entry %r", path, term)
            continue
        terms.add(term)
    return frozenset(terms)


def load_lexicon(paths: Mapping[str, str | Path] | Iterable[str | Path]) -> SlurLexicon:
    """Load per-language term files, either ``{lang: path}`` or paths named by language."""
    if not isinstance(paths, Mapping):
        paths = {lexicon_lang_from_path(p): p for p in paths}
    return SlurLexicon({lang: read_lexicon_terms(p) for lang, p in paths.items()})


def contains_slur(comment: Comment, lexicon: SlurLexicon, freqs: FrequencyTable | None = None) -> bool:
    """Whole-token match of the comment's text tokens against its language's lexicon.

    Tokens coming out of :func:`preprocess` are already normalized; pass
    ``freqs`` to normalize raw cleaned tokens here instead.
    """
    terms = lexicon.for_lang(comment.lang)
    tokens = comment.tokens if freqs is None else normalize_tokens(comment.tokens, freqs)
    return any(t in terms for t in tokens)


def _open_text(path: Path):
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8")
    return open(path, encoding="utf-8")


def read_raw_comments(path: str | Path, errors: list | None = None) -> Iterator[RawComment]:
    """Stream ``{"id", "text", "lang"}`` records from (optionally gzipped) JSONL.

    Malformed rows raise ``DataError`` unless an ``errors`` list is given, in
    which case a row-level report is appended and the row skipped.
    """
    path = Path(path)
    with _open_text(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                missing = [k for k in ("id", "text", "lang") if k not in rec]
                if missing:
                    raise DataError(f"missing field(s) {', '.join(missing)}")
                yield RawComment(str(rec["id"]), rec["text"], rec["lang"])
            except (json.JSONDecodeError, DataError) as exc:
                if errors is None:
                    raise DataError(f"{path}:{lineno}: {exc}") from exc
                errors.append({"file": str(path), "line": lineno, "error": str(exc)})


def write_comments(comments: Iterable[Comment], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for c in comments:
            fh.write(c.to_json() + "\n")


def read_comments(path: str | Path) -> list[Comment]:
    with _open_text(Path(path)) as fh:
        return [Comment.from_dict(json.loads(line)) for line in fh if line.strip()]
