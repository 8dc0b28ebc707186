"""Experiment config and the pipeline stages driven by the CLI.

Stage outputs live under ``<output_dir>/<stage>/`` and every stage writes a
``manifest.json`` with the SHA-256 of each file it produced.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping

from emojitransfer import clusters as cl
from emojitransfer.corpus import (
    FrequencyTable,
    build_frequency_table,
    load_lexicon,
    preprocess,
    read_comments,
    read_raw_comments,
    write_comments,
)
from emojitransfer.embeddings import EmbeddingConfig, EmbeddingTable, emoji_vectors, train_cbow
from emojitransfer.errors import ConfigError, DataError
from emojitransfer.evaluation import (
    ConditionThresholds,
    ExperimentReport,
    ModelShape,
    aggregate,
    condition_report,
    config_hash,
    run_experiment,
    write_report,
)
from emojitransfer.model import TrainConfig, build_encoder_vocab
from emojitransfer.tasks import (
    TargetSchema,
    dataset_stats,
    emit_cluster_dataset,
    emit_ep_dataset,
    load_dataset,
    load_target_task,
    manifest_path,
    save_dataset,
)

log = logging.getLogger(__name__)

SOURCE_TASKS = ("ep", "kmeans2", "kmeans3", "pmi-swear", "pmi-target")
EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3, 4


def _build(cls, data: Mapping | None, what: str):
    data = dict(data or {})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{what}: unknown keys {unknown}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{what}: {exc}") from exc


@dataclass(frozen=True)
class ClusterConfig:
    ep_k: int = 64
    kmeans_k: int = 6
    kmeans_seed: int = 0
    kmeans_max_iters: int = 300
    cluster_names: dict | None = None
    cluster_anchors: dict | None = None
    drop_unnamed: bool = False
    kmeans3_merge: dict = field(default_factory=lambda: dict(cl.KMEANS3_MERGE))
    kmeans2_merge: dict = field(default_factory=lambda: dict(cl.KMEANS2_MERGE))
    pmi_alpha: float = 1.0
    swear_min_count: int = 1
    summary_topn: int = 10

    def __post_init__(self):
        if self.ep_k < 1 or self.kmeans_k < 1:
            raise ConfigError("clusters: ep_k and kmeans_k must be >= 1")
        if self.pmi_alpha < 0:
            raise ConfigError("clusters: pmi_alpha must be >= 0")


@dataclass(frozen=True)
class TargetTaskConfig:
    name: str
    train: Path
    test: Path
    schema: TargetSchema


@dataclass
class ExperimentConfig:
    corpora: dict[str, Path]
    st_languages: list[str]
    source_tasks: list[str]
    target_tasks: list[TargetTaskConfig]
    output_dir: Path
    lexicons: dict[str, Path] = field(default_factory=dict)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    clusters: ClusterConfig = field(default_factory=ClusterConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    shape: ModelShape = field(default_factory=ModelShape)
    cap_per_class: int | None = 1000
    dev_fraction: float = 0.1
    n_seeds: int = 10
    master_seed: int = 0
    conditions: ConditionThresholds = field(default_factory=ConditionThresholds)
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, data: Mapping, base_dir: Path = Path(".")) -> ExperimentConfig:
        """Parse and validate; relative paths resolve against ``base_dir``."""
        data = dict(data)

        def path(p) -> Path:
            p = Path(p)
            return p if p.is_absolute() else base_dir / p

        allowed = {"corpora", "lexicons", "st_languages", "source_tasks", "target_tasks", "output_dir",
                   "embedding", "clusters", "train", "encoder", "cap_per_class", "dev_fraction", "n_seeds",
                   "master_seed", "conditions"}
        unknown = sorted(set(data) - allowed)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        for key in ("corpora", "st_languages", "source_tasks"):
            if not data.get(key):
                raise ConfigError(f"config needs a non-empty {key!r}")
        corpora = {lang: path(p) for lang, p in data["corpora"].items()}
        lexicons = {lang: path(p) for lang, p in data.get("lexicons", {}).items()}
        tts = []
        for i, tt in enumerate(data.get("target_tasks", [])):
            try:
                tts.append(TargetTaskConfig(tt["name"], path(tt["train"]), path(tt["test"]),
                                            TargetSchema.from_dict(tt["schema"])))
            except KeyError as exc:
                raise ConfigError(f"target_tasks[{i}]: missing {exc}") from None
        enc = data.get("encoder", {})
        cfg = cls(
            corpora=corpora,
            st_languages=list(data["st_languages"]),
            source_tasks=list(data["source_tasks"]),
            target_tasks=tts,
            output_dir=path(data.get("output_dir", "out")),
            lexicons=lexicons,
            embedding=_build(EmbeddingConfig, data.get("embedding"), "embedding"),
            clusters=_build(ClusterConfig, data.get("clusters"), "clusters"),
            train=_build(TrainConfig, data.get("train"), "train"),
            shape=_build(ModelShape, enc, "encoder"),
            cap_per_class=data.get("cap_per_class", 1000),
            dev_fraction=data.get("dev_fraction", 0.1),
            n_seeds=data.get("n_seeds", 10),
            master_seed=data.get("master_seed", 0),
            conditions=_build(ConditionThresholds, data.get("conditions"), "conditions"),
            raw=dict(data),
        )
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path, **overrides) -> ExperimentConfig:
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: {exc}") from None
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(data, path.parent)

    def validate(self) -> None:
        bad = sorted(set(self.source_tasks) - set(SOURCE_TASKS))
        if bad:
            raise ConfigError(f"unknown source tasks {bad}; choose from {list(SOURCE_TASKS)}")
        missing = [lang for lang in self.st_languages if lang not in self.corpora]
        if missing:
            raise ConfigError(f"st_languages {missing} have no corpus")
        for kind, paths in (("corpus", self.corpora), ("lexicon", self.lexicons)):
            for lang, p in paths.items():
                if not p.exists():
                    raise ConfigError(f"{kind} {lang}: file {p} does not exist")
        if "pmi-swear" in self.source_tasks:
            absent = [lang for lang in self.st_languages if lang not in self.lexicons]
            if absent:
                raise ConfigError(f"pmi-swear needs slur lexicons for {absent}")
        for tt in self.target_tasks:
            for p in (tt.train, tt.test):
                if not p.exists():
                    raise ConfigError(f"target task {tt.name}: file {p} does not exist")
        if "pmi-target" in self.source_tasks and not self.target_tasks:
            raise ConfigError("pmi-target needs at least one target task")
        if self.n_seeds < 2:
            raise ConfigError("n_seeds must be >= 2")
        if not 0 < self.dev_fraction < 1:
            raise ConfigError("dev_fraction must lie in (0, 1)")
        if self.cap_per_class is not None and self.cap_per_class < 1:
            raise ConfigError("cap_per_class must be >= 1 or null")
        names = [tt.name for tt in self.target_tasks]
        if len(set(names)) != len(names):
            raise ConfigError("target task names must be unique")

    def require_target_tasks(self) -> None:
        if not self.target_tasks:
            raise ConfigError("config has no target_tasks")

    def digest(self) -> str:
        return config_hash({k: v for k, v in self.raw.items() if k != "output_dir"})

    def stage_dir(self, stage: str) -> Path:
        return self.output_dir / stage


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(stage_dir: Path, files: list[Path], extra: Mapping | None = None) -> Path:
    manifest = {
        "files": {p.relative_to(stage_dir).as_posix(): _sha256(p) for p in sorted(files)},
        **(extra or {}),
    }
    path = stage_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def _dump_json(obj, path: Path) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def cmd_preprocess(cfg: ExperimentConfig) -> int:
    """Preprocess each language corpus; multilingual configs also get a concatenated store."""
    out = cfg.stage_dir("preprocess")
    out.mkdir(parents=True, exist_ok=True)
    errors: list = []
    files, tables = [], {}
    for lang in sorted(cfg.corpora):
        raws = [r for r in read_raw_comments(cfg.corpora[lang], errors)]
        wrong = [r for r in raws if r.lang != lang]
        for r in wrong:
            errors.append({"file": str(cfg.corpora[lang]), "id": r.id,
                           "error": f"lang {r.lang!r} does not match corpus language {lang!r}"})
        comments = preprocess(r for r in raws if r.lang == lang)
        p = out / f"comments.{lang}.jsonl"
        write_comments(comments, p)
        tables[lang] = build_frequency_table(comments)
        files += [p, _dump_json(tables[lang].to_dict(), out / f"freqs.{lang}.json")]
        log.info("preprocess %s: %d comments, %.1f%% with emoji", lang, len(comments),
                 100 * tables[lang].emoji_ratio)
    if len(cfg.corpora) > 1:
        p = out / "comments.all.jsonl"
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            for lang in sorted(cfg.corpora):
                fh.write((out / f"comments.{lang}.jsonl").read_text(encoding="utf-8"))
        total = sum((tables[lang] for lang in sorted(tables)), FrequencyTable())
        files += [p, _dump_json(total.to_dict(), out / "freqs.all.json")]
    err_path = out / "errors.jsonl"
    with open(err_path, "w", encoding="utf-8", newline="\n") as fh:
        for e in errors:
            fh.write(json.dumps(e, ensure_ascii=False, sort_keys=True) + "\n")
    files.append(err_path)
    write_manifest(out, files, {"languages": sorted(cfg.corpora), "errors": len(errors)})
    if errors:
        log.warning("preprocess: %d row-level errors, see %s", len(errors), err_path)
        return EXIT_PARTIAL
    return EXIT_OK


def _st_corpus(cfg: ExperimentConfig):
    out = cfg.stage_dir("preprocess")
    comments = []
    for lang in cfg.st_languages:
        p = out / f"comments.{lang}.jsonl"
        if not p.exists():
            raise DataError(f"{p} missing; run `preprocess` first")
        comments.extend(read_comments(p))
    return comments


def _st_freqs(cfg: ExperimentConfig) -> FrequencyTable:
    out = cfg.stage_dir("preprocess")
    total = FrequencyTable()
    for lang in cfg.st_languages:
        total = total + FrequencyTable.from_dict(json.loads((out / f"freqs.{lang}.json").read_text(encoding="utf-8")))
    return total


def cmd_embed(cfg: ExperimentConfig) -> int:
    comments = _st_corpus(cfg)
    freqs = _st_freqs(cfg)
    out = cfg.stage_dir("embed")
    out.mkdir(parents=True, exist_ok=True)
    table = train_cbow(comments, cfg.embedding, freqs)
    p = out / "embeddings.txt"
    table.save(p)
    write_manifest(out, [p, Path(str(p) + ".f64")],
                   {"languages": cfg.st_languages, "config": asdict(cfg.embedding), "vocab_size": len(table.vocab)})
    return EXIT_OK


def _kmeans_specs(cfg: ExperimentConfig, result: cl.KMeansResult) -> dict[str, cl.ClusterSpec]:
    cc = cfg.clusters
    if cc.cluster_names is not None:
        names = {int(i): n for i, n in cc.cluster_names.items()}
    elif cc.cluster_anchors is not None:
        names = cl.name_clusters(result, cc.cluster_anchors)
    else:
        return {}
    specs = {}
    for st, merge in (("kmeans3", cc.kmeans3_merge), ("kmeans2", cc.kmeans2_merge)):
        mm = cl.named_merge_map(names, merge, result.k, cc.drop_unnamed)
        spec = cl.merge_clusters(result, mm, st)
        spec.metadata.update({"cluster_names": {str(i): n for i, n in sorted(names.items())},
                              "languages": cfg.st_languages})
        specs[st] = spec
    return specs


def _load_tt(cfg: ExperimentConfig, tt: TargetTaskConfig):
    return (load_target_task(tt.train, tt.schema, "train", tt.name),
            load_target_task(tt.test, tt.schema, "test", tt.name))


def cmd_cluster(cfg: ExperimentConfig) -> int:
    comments = _st_corpus(cfg)
    freqs = _st_freqs(cfg)
    out = cfg.stage_dir("cluster")
    out.mkdir(parents=True, exist_ok=True)
    cc = cfg.clusters
    files = [_dump_json(cl.top_k_emojis(freqs, cc.ep_k).to_dict(), out / "ep.inventory.json")]
    if {"kmeans2", "kmeans3"} & set(cfg.source_tasks):
        emb = cfg.stage_dir("embed") / "embeddings.txt"
        if not emb.exists():
            raise DataError(f"{emb} missing; run `embed` first")
        table = EmbeddingTable.load(emb)
        points = emoji_vectors(table, freqs, cfg.embedding.emoji_min_count)
        result = cl.kmeans(points, cc.kmeans_k, cc.kmeans_seed, cc.kmeans_max_iters)
        files.append(_dump_json(result.to_dict(), out / "kmeans.json"))
        files.append(_dump_json(cl.cluster_summaries(result, table, cc.summary_topn), out / "kmeans.summary.json"))
        specs = _kmeans_specs(cfg, result)
        if not specs:
            log.warning("k-means clusters are unnamed; inspect %s and set clusters.cluster_names",
                        out / "kmeans.summary.json")
        for st, spec in specs.items():
            spec.save(out / f"{st}.json")
            files.append(out / f"{st}.json")
    if "pmi-swear" in cfg.source_tasks:
        lexicon = load_lexicon({lang: cfg.lexicons[lang] for lang in cfg.st_languages})
        spec = cl.build_swear_clusters(comments, lexicon, cc.swear_min_count, cc.pmi_alpha)
        spec.save(out / "pmi-swear.json")
        files.append(out / "pmi-swear.json")
    if "pmi-target" in cfg.source_tasks:
        for tt in cfg.target_tasks:
            train, _ = _load_tt(cfg, tt)
            spec = cl.build_target_clusters(train, cc.pmi_alpha, f"pmi-target.{tt.name}")
            spec.save(out / f"pmi-target.{tt.name}.json")
            files.append(out / f"pmi-target.{tt.name}.json")
    write_manifest(out, files, {"languages": cfg.st_languages})
    return EXIT_OK


def _st_files(cfg: ExperimentConfig) -> dict[str, Path]:
    """Source-task dataset name -> TSV path; PMI-Target yields one per target task."""
    out = cfg.stage_dir("st")
    paths = {}
    for st in cfg.source_tasks:
        if st == "pmi-target":
            for tt in cfg.target_tasks:
                paths[f"pmi-target.{tt.name}"] = out / f"pmi-target.{tt.name}.tsv"
        else:
            paths[st] = out / f"{st}.tsv"
    return paths


def cmd_build_st(cfg: ExperimentConfig) -> int:
    comments = _st_corpus(cfg)
    clusters_dir = cfg.stage_dir("cluster")
    out = cfg.stage_dir("st")
    out.mkdir(parents=True, exist_ok=True)
    files = []
    seed = cfg.master_seed
    for name, path in _st_files(cfg).items():
        if name == "ep":
            inv_path = clusters_dir / "ep.inventory.json"
            if not inv_path.exists():
                raise DataError(f"{inv_path} missing; run `cluster` first")
            inventory = cl.EmojiInventory.from_dict(json.loads(inv_path.read_text(encoding="utf-8")))
            ds = emit_ep_dataset(comments, inventory, cfg.cap_per_class, seed, "ep")
        else:
            spec_path = clusters_dir / f"{name}.json"
            if not spec_path.exists():
                hint = " (name the k-means clusters first)" if name.startswith("kmeans") else ""
                raise DataError(f"{spec_path} missing; run `cluster` first{hint}")
            ds = emit_cluster_dataset(comments, cl.ClusterSpec.load(spec_path), cfg.cap_per_class, seed, name)
        ds.provenance["languages"] = list(cfg.st_languages)
        files += [path, save_dataset(ds, path)]
        log.info("build-st %s: %d instances over %d classes", name, len(ds), len(ds.labels))
    write_manifest(out, files, {"languages": cfg.st_languages})
    return EXIT_OK


def run_report(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentReport:
    cfg.require_target_tasks()
    st_paths = _st_files(cfg)
    for p in st_paths.values():
        if not p.exists():
            raise DataError(f"{p} missing; run `build-st` first")
    manifests = {n: json.loads(manifest_path(p).read_text(encoding="utf-8")) for n, p in st_paths.items()}
    report = None
    for tt in cfg.target_tasks:
        train, test = _load_tt(cfg, tt)
        sts = {n: load_dataset(p) for n, p in st_paths.items()
               if not n.startswith("pmi-target.") or n == f"pmi-target.{tt.name}"}
        vocab = build_encoder_vocab([i.tokens for i in train.instances]
                                    + [i.tokens for ds in sts.values() for i in ds.instances])
        kw = dict(config=cfg.train, n_seeds=cfg.n_seeds, master_seed=cfg.master_seed, shape=cfg.shape,
                  dev_fraction=cfg.dev_fraction, vocab=vocab, jobs=jobs)
        baseline = run_experiment(None, train, test, **kw)
        results = []
        for name, ds in sts.items():
            results += run_experiment(ds, train, test, **kw)
        rep = aggregate(results, baseline)
        rep = condition_report(dataset_stats(train), manifests, rep, tt.name, cfg.conditions)
        report = rep if report is None else report.merge(rep)
    report.metadata.update({
        "master_seed": cfg.master_seed,
        "n_seeds": cfg.n_seeds,
        "config_hash": cfg.digest(),
        "st_digests": {n: m.get("digest") for n, m in sorted(manifests.items())},
        "st_languages": cfg.st_languages,
    })
    return report


def cmd_run(cfg: ExperimentConfig, jobs: int = 1) -> int:
    report = run_report(cfg, jobs)
    out = cfg.stage_dir("run")
    paths = write_report(report, out)
    write_manifest(out, list(paths.values()), {"config_hash": cfg.digest()})
    return EXIT_OK


def cmd_report(cfg: ExperimentConfig, fmt: str = "text") -> str:
    path = cfg.stage_dir("run") / "report.json"
    if not path.exists():
        raise DataError(f"{path} missing; run `run` first")
    report = ExperimentReport.from_dict(json.loads(path.read_text(encoding="utf-8")))
    if fmt == "json":
        return report.to_json()
    if fmt == "tsv":
        return report.to_tsv()
    return report.summary()
