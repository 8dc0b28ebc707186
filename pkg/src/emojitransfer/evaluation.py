"""Macro F1, the multi-seed experiment runner and report aggregation."""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from emojitransfer.errors import ConfigError, DataError
from emojitransfer.model import Encoder, TrainConfig, build_encoder_vocab, predict, train, transfer
from emojitransfer.tasks import DatasetStats, TaskDataset, split_train_dev

BASELINE = "baseline"


def per_class_f1(gold: Sequence[str], pred: Sequence[str], labels: Sequence[str]) -> dict[str, float]:
    """F1 per label; a label with no true positive scores 0."""
    if len(gold) != len(pred):
        raise DataError(f"gold/pred length mismatch: {len(gold)} vs {len(pred)}")
    if not gold:
        raise DataError("macro F1 needs at least one instance")
    allowed = set(labels)
    stray = (set(gold) | set(pred)) - allowed
    if stray:
        raise DataError(f"labels {sorted(stray)} not in label set")
    out = {}
    for c in labels:
        tp = sum(g == c and p == c for g, p in zip(gold, pred))
        fp = sum(g != c and p == c for g, p in zip(gold, pred))
        fn = sum(g == c and p != c for g, p in zip(gold, pred))
        if tp == 0:
            out[c] = 0.0
            continue
        precision, recall = tp / (tp + fp), tp / (tp + fn)
        out[c] = 2 * precision * recall / (precision + recall)
    return out


def macro_f1(gold: Sequence[str], pred: Sequence[str], labels: Sequence[str]) -> float:
    scores = per_class_f1(gold, pred, labels)
    return sum(scores.values()) / len(labels)


@dataclass(frozen=True)
class RunResult:
    st_name: str
    tt_name: str
    seed: int
    macro_f1: float
    per_class_f1: dict
    epochs_trained: int
    provenance: dict = field(default_factory=dict)


def derive_seeds(master_seed: int, n: int) -> list[int]:
    seeds = [int(s) for s in np.random.SeedSequence(master_seed).generate_state(n, dtype=np.uint32)]
    if len(set(seeds)) != n:
        raise ConfigError(f"seed derivation collided for master seed {master_seed}")
    return seeds


def config_hash(payload) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True, ensure_ascii=False).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ModelShape:
    dim: int = 50
    hidden: int = 64


def _one_run(st, tt_train, tt_test, config: TrainConfig, seed: int, vocab, shape: ModelShape,
             dev_fraction: float, master_seed: int) -> RunResult:
    cfg = TrainConfig(**{**config.to_dict(), "seed": seed})
    encoder = Encoder.initialize(vocab, shape.dim, shape.hidden, seed)
    tt_tr, tt_dev = split_train_dev(tt_train, dev_fraction, seed)
    if st is not None:
        st_tr, st_dev = split_train_dev(st, dev_fraction, seed)
        source = train(st_tr, st_dev, encoder, cfg)
        ckpt = transfer(source, tt_tr, tt_dev, cfg)
        init = "source"
    else:
        ckpt = train(tt_tr, tt_dev, encoder, cfg)
        init = "random"
    gold = [inst.label for inst in tt_test.instances]
    pred = predict([inst.tokens for inst in tt_test.instances], ckpt.encoder, ckpt.head)
    pcf = per_class_f1(gold, pred, tt_test.labels)
    return RunResult(
        st.name if st is not None else BASELINE,
        tt_train.name,
        seed,
        sum(pcf.values()) / len(pcf),
        pcf,
        ckpt.epochs_trained,
        {
            "encoder_init": init,
            "st_digest": st.digest() if st is not None else None,
            "tt_digest": tt_train.digest(),
            "config_hash": config_hash({"train": {**cfg.to_dict(), "seed": None}, "shape": asdict(shape),
                                        "dev_fraction": dev_fraction}),
            "master_seed": master_seed,
            "best_epoch": ckpt.best_epoch,
        },
    )


def run_experiment(
    st: TaskDataset | None,
    tt_train: TaskDataset,
    tt_test: TaskDataset | None,
    config: TrainConfig = TrainConfig(),
    n_seeds: int = 10,
    master_seed: int = 0,
    shape: ModelShape = ModelShape(),
    dev_fraction: float = 0.1,
    vocab: Mapping[str, int] | None = None,
    jobs: int = 1,
) -> list[RunResult]:
    """Train (ST -> TT transfer, or TT only when ``st`` is None) once per derived seed.

    Baseline and transfer runs on the same master seed share the vocabulary,
    seeds and encoder initialization; only the ST pre-training differs. Pass
    ``vocab`` explicitly to keep it identical across runs with different STs.
    """
    if n_seeds < 2:
        raise ConfigError("n_seeds must be >= 2")
    if tt_test is None or not len(tt_test):
        raise DataError(f"target task {tt_train.name!r} has no test split")
    if vocab is None:
        sources = [inst.tokens for inst in tt_train.instances]
        if st is not None:
            sources += [inst.tokens for inst in st.instances]
        vocab = build_encoder_vocab(sources)
    seeds = derive_seeds(master_seed, n_seeds)
    args = [(st, tt_train, tt_test, config, s, dict(vocab), shape, dev_fraction, master_seed) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_one_run, *zip(*args)))
    return [_one_run(*a) for a in args]


def mean_se(scores: Sequence[float]) -> tuple[float, float]:
    """Mean and standard error (sample std / sqrt(n)); a single score has se 0."""
    n = len(scores)
    if len(set(scores)) == 1:
        # exact, rather than a mean that is off by rounding
        return float(scores[0]), 0.0
    mean = math.fsum(scores) / n
    var = math.fsum((s - mean) ** 2 for s in scores) / (n - 1)
    return mean, math.sqrt(var) / math.sqrt(n)


def equivalent(mean_a: float, se_a: float, mean_b: float, se_b: float) -> bool:
    return abs(mean_a - mean_b) <= se_a + se_b


@dataclass
class ReportCell:
    st: str
    tt: str
    n_seeds: int
    mean: float
    se: float
    baseline_mean: float
    baseline_se: float
    delta: float
    equivalent: bool
    scores: list[float]
    conditions: dict = field(default_factory=dict)


@dataclass
class ExperimentReport:
    cells: list[ReportCell]
    runs: list[RunResult]
    metadata: dict = field(default_factory=dict)

    def cell(self, st: str, tt: str) -> ReportCell:
        for c in self.cells:
            if c.st == st and c.tt == tt:
                return c
        raise KeyError((st, tt))

    @property
    def target_tasks(self) -> list[str]:
        return list(dict.fromkeys(c.tt for c in self.cells))

    def merge(self, other: ExperimentReport) -> ExperimentReport:
        return ExperimentReport(self.cells + other.cells, self.runs + other.runs, {**self.metadata, **other.metadata})

    def to_dict(self) -> dict:
        return {
            "metadata": self.metadata,
            "cells": [asdict(c) for c in self.cells],
            "runs": [asdict(r) for r in self.runs],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> ExperimentReport:
        return cls([ReportCell(**c) for c in data["cells"]], [RunResult(**r) for r in data["runs"]],
                   dict(data.get("metadata", {})))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def to_tsv(self) -> str:
        """One row per (st, tt, seed), baseline rows included."""
        lines = ["st\ttt\tseed\tmacro_f1\tepochs_trained\tencoder_init"]
        for r in self.runs:
            lines.append(f"{r.st_name}\t{r.tt_name}\t{r.seed}\t{r.macro_f1!r}\t{r.epochs_trained}\t"
                         f"{r.provenance.get('encoder_init', '')}")
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        """Per target task: ST mean +- se, delta vs baseline, equivalence and condition tags."""
        out = []
        for tt in self.target_tasks:
            cells = [c for c in self.cells if c.tt == tt]
            cond = next((c.conditions for c in cells if c.conditions), {})
            title = f"== {tt} =="
            if cond:
                title += (f"  emoji content {cond['emoji_content']:.1%} ({cond['emoji_bucket']}),"
                          f" minority {cond['minority_fraction']:.1%} ({cond['balance_bucket']})")
            out.append(title)
            out.append(f"{'source task':<20}{'macro F1':>18}{'delta':>10}  equivalent  st languages")
            for c in cells:
                langs = ",".join(c.conditions.get("st_languages", [])) or "-"
                eq = "yes" if c.equivalent else "no"
                out.append(f"{c.st:<20}{c.mean:>10.3f} ± {c.se:.3f}{c.delta:>+10.3f}  {eq:<10}  {langs}")
            out.append("")
        return "\n".join(out)


def aggregate(results: Sequence[RunResult], baseline: Sequence[RunResult]) -> ExperimentReport:
    """Mean/se per source task against the baseline of the same target task."""
    if not results or not baseline:
        raise DataError("aggregate needs non-empty result and baseline lists")
    tts = {r.tt_name for r in results} | {r.tt_name for r in baseline}
    if len(tts) != 1:
        raise DataError(f"results span several target tasks: {sorted(tts)}")
    tt = tts.pop()
    b_mean, b_se = mean_se([r.macro_f1 for r in baseline])
    cells = [ReportCell(BASELINE, tt, len(baseline), b_mean, b_se, b_mean, b_se, 0.0, True,
                        [r.macro_f1 for r in baseline])]
    for st in dict.fromkeys(r.st_name for r in results if r.st_name != BASELINE):
        scores = [r.macro_f1 for r in results if r.st_name == st]
        mean, se = mean_se(scores)
        cells.append(ReportCell(st, tt, len(scores), mean, se, b_mean, b_se, mean - b_mean,
                                equivalent(mean, se, b_mean, b_se), scores))
    runs = list(baseline) + [r for r in results if r.st_name != BASELINE]
    return ExperimentReport(cells, runs, {"standard_error": "sample std (n-1) / sqrt(n)",
                                          "equivalence": "|mean_a - mean_b| <= se_a + se_b"})


@dataclass(frozen=True)
class ConditionThresholds:
    emoji_content: float = 0.05
    balance: float = 0.4


def condition_report(
    tt_stats: DatasetStats,
    st_manifests: Mapping[str, Mapping],
    report: ExperimentReport,
    tt: str | None = None,
    thresholds: ConditionThresholds = ConditionThresholds(),
) -> ExperimentReport:
    """Tag the cells of one target task with emoji-content, balance and ST-language conditions.

    ``st_manifests`` maps ST name to its manifest; the ST corpus languages are
    read from ``manifest["provenance"]["languages"]`` (or ``manifest["languages"]``).
    """
    tt = tt or report.target_tasks[0]
    emoji_bucket = "high" if tt_stats.emoji_content >= thresholds.emoji_content else "low"
    balance_bucket = "balanced" if tt_stats.minority_fraction >= thresholds.balance else "unbalanced"
    for cell in report.cells:
        if cell.tt != tt:
            continue
        manifest = st_manifests.get(cell.st, {})
        langs = manifest.get("languages") or manifest.get("provenance", {}).get("languages", [])
        cell.conditions = {
            "emoji_content": tt_stats.emoji_content,
            "emoji_bucket": emoji_bucket,
            "minority_fraction": tt_stats.minority_fraction,
            "balance_bucket": balance_bucket,
            "st_languages": list(langs),
            "st_setting": ("multilingual" if len(langs) > 1 else "monolingual") if langs else None,
        }
    report.metadata["condition_thresholds"] = asdict(thresholds)
    return report


def write_report(report: ExperimentReport, out_dir: str | Path) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"json": out_dir / "report.json", "tsv": out_dir / "report.tsv", "summary": out_dir / "summary.txt"}
    paths["json"].write_text(report.to_json(), encoding="utf-8")
    paths["tsv"].write_text(report.to_tsv(), encoding="utf-8")
    paths["summary"].write_text(report.summary(), encoding="utf-8")
    return paths
