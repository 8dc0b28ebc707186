from __future__ import annotations

import json

import pytest
from hypothesis import settings

from emojitransfer.corpus import Comment
from emojitransfer.synthetic import write_fixtures

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

# filled by tests/test_acceptance.py, one line per criterion
CRITERIA_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_LINES, key=lambda s: int(s.split()[1][1:])):
            terminalreporter.write_line(line)


def make_comment(tokens, emojis=(), lang="de", cid="c0") -> Comment:
    return Comment(cid, tuple(tokens), tuple(emojis), lang)


@pytest.fixture
def comment_factory():
    counter = iter(range(10**9))

    def factory(tokens, emojis=(), lang="de"):
        return make_comment(tokens, emojis, lang, f"c{next(counter):06d}")

    return factory


# every k-means index named explicitly, so tiny fixtures never hit an anchor-vote tie
CLUSTER_NAMES = {"0": "happy", "1": "unhappy", "2": "other", "3": "love", "4": "nature", "5": "unhappy"}


def write_small_config(directory, **changes):
    """Synthetic fixtures plus a config sized for seconds-long end-to-end runs."""
    path = write_fixtures(directory, n_source=1200, n_tt=100, seed=0)
    cfg = json.loads(path.read_text(encoding="utf-8"))
    cfg["clusters"].pop("cluster_anchors")
    cfg["clusters"]["cluster_names"] = CLUSTER_NAMES
    cfg["embedding"].update(epochs=1, dim=8, emoji_min_count=5)
    cfg.update(n_seeds=2, cap_per_class=200, train={"max_epochs": 2, "patience": 1},
               encoder={"dim": 8, "hidden": 8})
    cfg.update(changes)
    path.write_text(json.dumps(cfg, ensure_ascii=False), encoding="utf-8")
    return path


@pytest.fixture
def small_config():
    return write_small_config
