from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from emojitransfer.clusters import KMEANS3_MERGE, ClusterSpec, EmojiInventory, KMeansResult, merge_clusters
from emojitransfer.errors import ConfigError, DataError
from emojitransfer.tasks import (
    HS_LABELS,
    Instance,
    TargetSchema,
    TaskDataset,
    dataset_stats,
    emit_cluster_dataset,
    emit_ep_dataset,
    load_dataset,
    load_target_task,
    save_dataset,
    split_train_dev,
    target_dataset_from_texts,
)

from conftest import make_comment

INV = EmojiInventory((("😍", 10), ("😂", 8), ("😡", 3)), 3)
SPEC = ClusterSpec("k2", "kmeans", ["negative", "positive"], {"😍": "positive", "😂": "positive", "😡": "negative"})


def corpus(rows):
    return [make_comment(t, e, cid=f"{i:03d}") for i, (t, e) in enumerate(rows)]


class TestEmitEp:
    def test_single_emoji(self):
        ds = emit_ep_dataset(corpus([(["great", "day"], ["😍"])]), INV)
        assert [(i.tokens, i.label) for i in ds.instances] == [(("great", "day"), "😍")]
        assert ds.labels == INV.labels and ds.kind == "source"

    def test_distinct_emojis(self):
        ds = emit_ep_dataset(corpus([(["x"], ["😍", "😂", "😍"])]), INV)
        assert [i.label for i in ds.instances] == ["😍", "😂"]

    def test_outside_inventory_skipped(self):
        ds = emit_ep_dataset(corpus([(["x"], ["🌱"]), (["y"], ["😍"])]), INV)
        assert [i.tokens for i in ds.instances] == [("y",)]

    def test_nothing_emitted(self):
        with pytest.raises(DataError):
            emit_ep_dataset(corpus([(["x"], ["🌱"])]), INV)

    def test_cap_arithmetic(self):
        inv = EmojiInventory(tuple((chr(0x1F600 + i), 1) for i in range(64)), 64)
        rows = [(["w"], [chr(0x1F600 + (i % 64))]) for i in range(64 * 30)]
        ds = emit_ep_dataset(corpus(rows), inv, cap_per_class=20, seed=1)
        assert len(ds) <= 64 * 20 and max(Counter(i.label for i in ds.instances).values()) == 20

    @given(st.lists(st.tuples(st.lists(st.sampled_from("abc"), max_size=3),
                              st.lists(st.sampled_from(["😍", "😂", "😡", "🌱"]), min_size=1, max_size=3)),
                    min_size=1, max_size=40), st.integers(1, 5), st.integers(0, 100))
    def test_properties(self, rows, cap, seed):
        cs = corpus(rows)
        try:
            a = emit_ep_dataset(cs, INV, cap, seed)
        except DataError:
            return
        b = emit_ep_dataset(list(reversed(cs)), INV, cap, seed)
        assert a.instances == b.instances
        assert all(i.label in a.labels for i in a.instances)
        assert max(Counter(i.label for i in a.instances).values()) <= cap


class TestEmitCluster:
    def test_example_sentence(self):
        ds = emit_cluster_dataset(corpus([(["so", "beautiful", "and", "great", "advice"], ["😍"])]), SPEC)
        assert ds.instances[0].label == "positive" and ds.labels == SPEC.classes

    def test_conflict_skipped(self):
        ds = emit_cluster_dataset(corpus([(["a"], ["😍", "😡"]), (["b"], ["😍", "😂"])]), SPEC)
        assert [i.tokens for i in ds.instances] == [("b",)]

    def test_unmapped_only_skipped(self):
        ds = emit_cluster_dataset(corpus([(["a"], ["🌱"]), (["b"], ["🌱", "😡"])]), SPEC)
        assert [(i.tokens, i.label) for i in ds.instances] == [(("b",), "negative")]

    def test_zero_instances(self):
        with pytest.raises(DataError):
            emit_cluster_dataset(corpus([(["a"], ["🌱"])]), SPEC)

    def test_three_class_spec(self):
        res = KMeansResult(np.eye(6), {chr(0x1F600 + i): i for i in range(6)}, 0.0, 0)
        names = ["happy", "fun", "love", "other", "nature", "unhappy"]
        spec = merge_clusters(res, {i: KMEANS3_MERGE[n] for i, n in enumerate(names)}, "kmeans3")
        ds = emit_cluster_dataset(corpus([(["w"], [chr(0x1F600 + i)]) for i in range(6)]), spec)
        assert ds.labels == ["negative", "neutral", "positive"]
        assert {i.label for i in ds.instances} == set(ds.labels)

    def test_source_rejects_emoji_tokens(self):
        with pytest.raises(DataError):
            TaskDataset("x", "source", [Instance(("a", "😍"), "l")], ["l"])


HS_SCHEMA = TargetSchema("text", "label", {"offense": "hate", "hate": "hate", "harmful": "hate", "other": "none",
                                            "none": "none"}, list(HS_LABELS))


class TestLoadTarget:
    def test_sentiment_example(self, tmp_path):
        p = tmp_path / "sa.tsv"
        p.write_text("text\tlabel\nFinally starting the 5th season of #Dexter. See ya later, weekend!\tPositive\n",
                     encoding="utf-8")
        schema = TargetSchema("text", "label", {"positive": "positive", "negative": "negative"})
        ds = load_target_task(p, schema, "train", "sa")
        assert ds.instances[0].tokens == ("finally", "starting", "the", "5th", "season", "of", "dexter", "see",
                                          "ya", "later", "weekend")
        assert ds.instances[0].label == "positive" and ds.kind == "target"

    def test_label_normalization_csv(self, tmp_path):
        p = tmp_path / "hs.csv"
        p.write_text('text,label\n"du bist, echt 😡",OFFENSE\nnett hier,other\n', encoding="utf-8")
        ds = load_target_task(p, HS_SCHEMA)
        assert [i.label for i in ds.instances] == ["hate", "none"]
        assert ds.instances[0].tokens == ("du", "bist", "echt", "😡") and ds.instances[0].has_emoji

    def test_unknown_label_names_row(self, tmp_path):
        p = tmp_path / "hs.tsv"
        p.write_text("text\tlabel\nok\tnone\nhmm\tmaybe\n", encoding="utf-8")
        with pytest.raises(DataError, match=r"hs\.tsv:3.*maybe"):
            load_target_task(p, HS_SCHEMA)

    def test_positional_columns(self, tmp_path):
        p = tmp_path / "x.tsv"
        p.write_text("none\thallo\n", encoding="utf-8")
        schema = TargetSchema(1, 0, {"none": "none"}, list(HS_LABELS), header=False)
        assert load_target_task(p, schema).instances[0].tokens == ("hallo",)

    def test_schema_from_dict(self):
        schema = TargetSchema.from_dict({"text_column": "t", "label_column": "l", "label_map": {"Offense": "hate"}})
        assert schema.label_map == {"offense": "hate"} and schema.label_set == ["hate"]


class TestStats:
    def test_hs_de_counts(self):
        ds = TaskDataset("hs", "target", [Instance(("w",), "hate")] * 1158 + [Instance(("w",), "none")] * 2439,
                         list(HS_LABELS))
        stats = dataset_stats(ds)
        assert stats.minority_fraction == pytest.approx(1158 / 3597) and stats.size == 3597
        assert stats.label_counts == {"hate": 1158, "none": 2439}

    def test_balanced(self):
        ds = TaskDataset("b", "target", [Instance(("w",), "hate"), Instance(("w",), "none")] * 50, list(HS_LABELS))
        assert dataset_stats(ds).minority_fraction == 0.5

    def test_emoji_content(self):
        texts = [f"text {i} 😍" if i < 3 else f"text {i}" for i in range(20)]
        ds = target_dataset_from_texts(texts, ["none"] * 20, HS_LABELS, "e")
        assert dataset_stats(ds).emoji_content == 0.15

    @given(st.lists(st.sampled_from(["a", "b", "c"]), min_size=1, max_size=50))
    def test_counts_round_trip(self, labels):
        ds = TaskDataset("r", "target", [Instance(("w",), y) for y in labels], ["a", "b", "c"])
        stats = dataset_stats(ds)
        assert sum(stats.label_counts.values()) == stats.size == len(labels)
        assert stats.label_counts == {k: Counter(labels)[k] for k in "abc"}
        assert 0 < stats.minority_fraction <= 1


def labelled(n_per_label):
    inst = [Instance((f"t{lab}{i}",), lab) for lab, n in n_per_label.items() for i in range(n)]
    return TaskDataset("d", "target", inst, sorted(n_per_label))


class TestSplit:
    def test_ninety_ten(self):
        train, dev = split_train_dev(labelled({"a": 60, "b": 40}), 0.1, seed=0)
        assert (len(train), len(dev)) == (90, 10)
        assert Counter(i.label for i in dev.instances) == {"a": 6, "b": 4}

    def test_same_seed_same_split(self):
        ds = labelled({"a": 30, "b": 17})
        assert split_train_dev(ds, 0.2, 3) == split_train_dev(ds, 0.2, 3)

    @given(st.dictionaries(st.sampled_from("abcd"), st.integers(2, 40), min_size=1), st.floats(0.05, 0.5),
           st.integers(0, 1000))
    def test_properties(self, counts, frac, seed):
        ds = labelled(counts)
        train, dev = split_train_dev(ds, frac, seed)
        tr, dv = [i.tokens for i in train.instances], [i.tokens for i in dev.instances]
        assert not set(tr) & set(dv) and sorted(tr + dv) == sorted(i.tokens for i in ds.instances)
        for lab, n in counts.items():
            n_dev = sum(i.label == lab for i in dev.instances)
            assert 1 <= n_dev <= n - 1
            assert abs(n_dev - n * frac) <= 1 or n_dev in (1, n - 1)
        other = split_train_dev(ds, frac, seed + 1)[1]
        assert Counter(i.label for i in other.instances) == Counter(i.label for i in dev.instances)

    def test_two_seeds_permute_differently(self):
        ds = labelled({"a": 50, "b": 50})
        assert split_train_dev(ds, 0.1, 1)[1].instances != split_train_dev(ds, 0.1, 2)[1].instances

    def test_singleton_label(self):
        with pytest.raises(DataError):
            split_train_dev(labelled({"a": 10, "b": 1}))

    def test_bad_fraction(self):
        with pytest.raises(ConfigError):
            split_train_dev(labelled({"a": 10}), 1.0)


def test_dataset_file_round_trip(tmp_path):
    ds = emit_ep_dataset(corpus([(["a", "b"], ["😍"]), (["c"], ["😂"]), ([], ["😡"])]), INV)
    mpath = save_dataset(ds, tmp_path / "ep.tsv")
    assert mpath.name == "ep.manifest.json"
    back = load_dataset(tmp_path / "ep.tsv")
    assert back.instances == ds.instances and back.labels == ds.labels and back.digest() == ds.digest()
    assert (tmp_path / "ep.tsv").read_text(encoding="utf-8").splitlines()[0] == "😍\ta b"
