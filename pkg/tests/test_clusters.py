import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from emojitransfer.clusters import (
    KMEANS2_MERGE,
    KMEANS3_MERGE,
    ClusterSpec,
    EmojiInventory,
    KMeansResult,
    build_swear_clusters,
    build_target_clusters,
    kmeans,
    merge_clusters,
    name_clusters,
    named_merge_map,
    pmi,
    top_k_emojis,
)
from emojitransfer.corpus import FrequencyTable, SlurLexicon
from emojitransfer.errors import ConfigError, DataError
from emojitransfer.tasks import Instance, TaskDataset

from conftest import make_comment

LEX = SlurLexicon({"de": frozenset({"slur"})})


def corpus_from(rows):
    """rows: (is_slur, emojis) -> comments; slur comments carry the lexicon term."""
    return [make_comment(["slur" if s else "word"], list(em), cid=f"{i:04d}") for i, (s, em) in enumerate(rows)]


def target_ds(rows, labels=("negative", "positive")):
    return TaskDataset("tt", "target", [Instance(("w", *em), lab, bool(em)) for lab, em in rows], list(labels))


class TestTopK:
    def freqs(self, n):
        from collections import Counter

        emojis = [chr(0x1F600 + i) for i in range(n)]
        return FrequencyTable(Counter({e: 1000 - i for i, e in enumerate(emojis)} | {"word": 5000}))

    def test_sixty_four(self):
        inv = top_k_emojis(self.freqs(80), 64)
        assert len(inv) == 64 and not inv.truncated
        assert inv.labels[0] == "😀" and "word" not in inv

    def test_k_one(self):
        assert top_k_emojis(self.freqs(5), 1).labels == ["😀"]

    def test_fewer_than_k_flagged(self):
        inv = top_k_emojis(self.freqs(3), 64)
        assert len(inv) == 3 and inv.truncated and inv.to_dict()["metadata"]["truncated"]

    def test_tie_by_codepoint(self):
        from collections import Counter

        inv = top_k_emojis(FrequencyTable(Counter({"😂": 5, "😀": 5, "😍": 9})), 3)
        assert inv.labels == ["😍", "😀", "😂"]

    def test_no_emoji(self):
        from collections import Counter

        with pytest.raises(DataError):
            top_k_emojis(FrequencyTable(Counter({"a": 1})), 3)

    def test_round_trip(self):
        inv = top_k_emojis(self.freqs(5), 3)
        assert EmojiInventory.from_dict(inv.to_dict()) == inv


def brute_best_inertia(x, k):
    best = math.inf
    n = len(x)
    for labels in itertools.product(range(k), repeat=n):
        if len(set(labels)) < k:
            continue
        labels = np.array(labels)
        cost = sum(((x[labels == j] - x[labels == j].mean(axis=0)) ** 2).sum() for j in range(k))
        best = min(best, cost)
    return best


def points_of(x):
    return {f"p{i}": row for i, row in enumerate(x)}


class TestKMeans:
    def test_k_one_is_the_mean(self):
        x = np.random.default_rng(0).normal(size=(7, 3))
        res = kmeans(points_of(x), 1)
        assert np.allclose(res.centroids[0], x.mean(axis=0))
        assert res.inertia == pytest.approx(x.var(axis=0).sum() * len(x))

    def test_two_pairs_match_brute_force(self):
        x = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])
        res = kmeans(points_of(x), 2, seed=3)
        assert res.assignment["p0"] == res.assignment["p1"] != res.assignment["p2"] == res.assignment["p3"]
        assert res.inertia == pytest.approx(brute_best_inertia(x, 2))

    def test_k_equals_n(self):
        x = np.random.default_rng(1).normal(size=(5, 2))
        res = kmeans(points_of(x), 5)
        assert res.inertia == 0.0
        assert sorted(res.assignment.values()) == list(range(5))

    def test_too_few_points(self):
        with pytest.raises(DataError):
            kmeans(points_of(np.zeros((2, 2))), 3)

    def test_deterministic(self):
        x = np.random.default_rng(2).normal(size=(30, 4))
        a, b = kmeans(points_of(x), 4, seed=9), kmeans(points_of(x), 4, seed=9)
        assert a.assignment == b.assignment and np.array_equal(a.centroids, b.centroids)

    def test_duplicate_points(self):
        x = np.zeros((4, 2))
        res = kmeans(points_of(x), 2)
        assert res.inertia == 0.0

    @given(arrays(np.float64, st.tuples(st.integers(3, 15), st.integers(1, 3)),
                  elements=st.floats(-100, 100, allow_nan=False)),
           st.integers(1, 3), st.integers(0, 2**32 - 1))
    def test_invariants(self, x, k, seed):
        res = kmeans(points_of(x), k, seed)
        hist = res.inertia_history
        assert all(b <= a + 1e-9 * max(1.0, abs(a)) for a, b in zip(hist, hist[1:]))
        d2 = ((x[:, None, :] - res.centroids[None]) ** 2).sum(axis=2)
        labels = np.array([res.assignment[f"p{i}"] for i in range(len(x))])
        assert np.all(d2[np.arange(len(x)), labels] <= d2.min(axis=1) + 1e-9)
        assert res.inertia == pytest.approx(d2[np.arange(len(x)), labels].sum(), abs=1e-9)

    def test_round_trip(self):
        res = kmeans(points_of(np.random.default_rng(0).normal(size=(6, 2))), 2)
        back = KMeansResult.from_dict(res.to_dict())
        assert back.assignment == res.assignment and np.array_equal(back.centroids, res.centroids)


def six_cluster_result():
    names = ["happy", "fun", "love", "other", "nature", "unhappy"]
    assignment = {chr(0x1F600 + i): i for i in range(6)}
    return KMeansResult(np.eye(6), assignment, 0.0, 0), names


class TestMerge:
    def test_three_class_merge(self):
        res, names = six_cluster_result()
        mm = named_merge_map(dict(enumerate(names)), KMEANS3_MERGE, 6)
        spec = merge_clusters(res, mm, "kmeans3")
        assert spec.classes == ["negative", "neutral", "positive"]
        assert spec.sizes() == {"negative": 1, "neutral": 2, "positive": 3}

    def test_identity(self):
        res, _ = six_cluster_result()
        spec = merge_clusters(res, {i: str(i) for i in range(6)})
        assert spec.classes == [str(i) for i in range(6)]
        assert all(spec[e] == str(i) for e, i in res.assignment.items())

    def test_two_class_drops_neutral(self):
        res, names = six_cluster_result()
        spec = merge_clusters(res, named_merge_map(dict(enumerate(names)), KMEANS2_MERGE, 6), "kmeans2")
        assert spec.classes == ["negative", "positive"]
        assert chr(0x1F603) not in spec.mapping and chr(0x1F604) not in spec.mapping
        assert len(spec.mapping) == 4

    def test_nonexistent_cluster(self):
        res, _ = six_cluster_result()
        with pytest.raises(ConfigError, match="nonexistent"):
            merge_clusters(res, {i: "x" for i in range(7)})

    def test_uncovered_cluster(self):
        res, _ = six_cluster_result()
        with pytest.raises(ConfigError):
            merge_clusters(res, {0: "x"})

    def test_name_by_anchors(self):
        res, _ = six_cluster_result()
        names = name_clusters(res, {"happy": ["😀", "😁"], "unhappy": ["😅"]})
        assert names == {0: "happy", 1: "happy", 5: "unhappy"}
        with pytest.raises(ConfigError):
            named_merge_map(names, KMEANS3_MERGE, 6)
        assert named_merge_map(names, KMEANS3_MERGE, 6, drop_unnamed=True)[2] is None

    def test_tied_anchor_vote(self):
        res, _ = six_cluster_result()
        with pytest.raises(ConfigError):
            name_clusters(res, {"happy": ["😀"], "fun": ["😀"]})


def oracle_pmi(joint, a, b):
    """Raw probability ratio P(e,c) / (P(e) P(c)) from the joint table, exact."""
    n = sum(sum(r) for r in joint)
    p_ec = Fraction(int(joint[a][b]), n)
    p_e = Fraction(int(sum(joint[a])), n)
    p_c = Fraction(int(sum(r[b] for r in joint)), n)
    return p_ec / (p_e * p_c)


class TestPmi:
    def test_independence_is_zero(self):
        joint = np.outer([2, 3], [4, 6])  # rank one
        assert np.allclose(pmi(joint, ["a", "b"], ["x", "y"], alpha=0).values, 0.0, atol=1e-12)

    def test_worked_value(self):
        # n(e,c)=8, n(e)=10, n(c)=16, N=40
        joint = np.array([[8, 2], [8, 22]])
        table = pmi(joint, ["e", "f"], ["c", "d"], alpha=0)
        assert (table.n_emoji[0], table.n_class[0], table.total) == (10, 16, 40)
        assert table.values[0, 0] == pytest.approx(1.0, abs=1e-12)

    @given(arrays(np.int64, st.tuples(st.integers(1, 6), st.integers(2, 4)), elements=st.integers(1, 50)))
    def test_matches_probability_ratio_oracle(self, joint):
        table = pmi(joint, [str(i) for i in range(joint.shape[0])], [str(j) for j in range(joint.shape[1])], 0)
        for a, b in np.ndindex(joint.shape):
            assert table.values[a, b] == pytest.approx(math.log2(oracle_pmi(joint.tolist(), a, b)), abs=1e-12)
        assert table.total == joint.sum()

    @given(arrays(np.int64, st.tuples(st.integers(1, 6), st.integers(2, 4)), elements=st.integers(0, 20)),
           st.floats(0.01, 5))
    def test_smoothed_values_finite(self, joint, alpha):
        if joint.sum() == 0:
            return
        assert np.all(np.isfinite(pmi(joint, list(range(joint.shape[0])), list(range(joint.shape[1])), alpha).values))

    def test_zero_cell_unsmoothed_is_minus_inf(self):
        assert pmi(np.array([[0, 3], [2, 1]]), ["a", "b"], ["x", "y"], alpha=0).values[0, 0] == -np.inf

    def test_nested_mapping_input(self):
        table = pmi({"😍": {"pos": 3}, "😡": {"neg": 2}}, alpha=1)
        assert table.emojis == ["😍", "😡"] and table.classes == ["neg", "pos"]
        assert table.joint.tolist() == [[0, 3], [2, 0]]

    def test_empty_table(self):
        with pytest.raises(DataError):
            pmi(np.zeros((1, 2)), ["a"], ["x", "y"])


class TestSwearClusters:
    def test_only_in_slur_comments(self):
        rows = [(True, "😡"), (False, "😍"), (False, "😍")]
        assert build_swear_clusters(corpus_from(rows), LEX)["😡"] == "slur"

    def test_base_rate_tie_is_neutral(self):
        rows = [(True, "😐")] * 3 + [(False, "😐")] * 7
        for alpha in (0.0, 1.0):
            assert build_swear_clusters(corpus_from(rows), LEX, alpha=alpha)["😐"] == "neutral"

    def test_fifty_comment_fixture(self):
        # slur comments: A x6, B x2, C x1 (+1 without emoji); neutral: A x4, B x8, C x4 (+24 without)
        rows = ([(True, "🅰")] * 6 + [(True, "🅱")] * 2 + [(True, "©")] + [(True, "")]
                + [(False, "🅰")] * 4 + [(False, "🅱")] * 8 + [(False, "©")] * 4 + [(False, "")] * 24)
        assert len(rows) == 50
        spec = build_swear_clusters(corpus_from(rows), LEX, alpha=0)
        # column sums: slur 9, neutral 16, N 25
        # A: 6*25/(10*9) > 4*25/(10*16); B: 2*25/(10*9) < 8*25/(10*16); C: 1*25/(5*9) < 4*25/(5*16)
        assert spec.mapping == {"🅰": "slur", "🅱": "neutral", "©": "neutral"}

    def test_comment_level_counting(self):
        rows = [(True, "😡😡😡"), (False, "😡"), (False, "😍")]
        spec = build_swear_clusters(corpus_from(rows), LEX, alpha=0)
        assert spec.metadata["total"] == 3

    def test_min_count(self):
        rows = [(True, "😡")] * 3 + [(False, "😍")]
        spec = build_swear_clusters(corpus_from(rows), LEX, min_emoji_count=2)
        assert set(spec.mapping) == {"😡"}

    def test_no_slur_comments(self):
        with pytest.raises(DataError, match="slur"):
            build_swear_clusters(corpus_from([(False, "😍")]), LEX)

    def test_metadata_documents_formula(self):
        spec = build_swear_clusters(corpus_from([(True, "😡"), (False, "😍")]), LEX)
        assert "log2" in spec.metadata["formula"] and spec.metadata["alpha"] == 1.0


class TestTargetClusters:
    def test_only_positive(self):
        ds = target_ds([("positive", ["😍"]), ("negative", ["😡"]), ("positive", [])])
        assert build_target_clusters(ds)["😍"] == "positive"

    def test_nine_to_one_on_balanced_data(self):
        rows = [("positive", ["😍"])] * 9 + [("negative", ["😍"])] + [("negative", ["😡"])] * 8
        rows += [("positive", [])] * 41 + [("negative", [])] * 41
        spec = build_target_clusters(target_ds(rows), alpha=1.0)
        assert spec["😍"] == "positive" and spec["😡"] == "negative"

    def test_tie_goes_to_first_label(self):
        ds = target_ds([("positive", ["😐"]), ("negative", ["😐"])])
        assert build_target_clusters(ds, alpha=0)["😐"] == "negative"

    def test_coverage_and_closure(self):
        ds = target_ds([("positive", ["😍", "😂"]), ("negative", ["😡"]), ("negative", [])])
        spec = build_target_clusters(ds)
        assert set(spec.mapping) == {"😍", "😂", "😡"}
        assert set(spec.classes) <= set(ds.labels)

    def test_no_emojis(self):
        with pytest.raises(DataError):
            build_target_clusters(target_ds([("positive", []), ("negative", [])]))

    def test_imbalance_reproduced(self):
        rng = np.random.default_rng(0)
        pool = [chr(0x1F600 + i) for i in range(20)]

        def ds(minority):
            rows = []
            for i in range(400):
                lab = "negative" if i < 400 * minority else "positive"
                rows.append((lab, [pool[rng.integers(len(pool))]]))
            return target_ds(rows)

        unbalanced = build_target_clusters(ds(0.1)).sizes()["positive"]
        balanced = build_target_clusters(ds(0.5)).sizes()["positive"]
        assert unbalanced > balanced


class TestClusterSpec:
    def test_round_trip_and_digest(self, tmp_path):
        spec = ClusterSpec("s", "pmi-target", ["a", "b"], {"😍": "a"})
        assert spec.metadata["empty_classes"] == ["b"]
        spec.save(tmp_path / "s.json")
        back = ClusterSpec.load(tmp_path / "s.json")
        assert back == spec and back.digest() == spec.digest()

    def test_stray_class(self):
        with pytest.raises(DataError):
            ClusterSpec("s", "kmeans", ["a"], {"😍": "b"})

    def test_provenance(self):
        with pytest.raises(ConfigError):
            ClusterSpec("s", "magic", ["a"], {"😍": "a"})
