"""End-to-end runs: attribute nets, feature extraction, trees, metrics, Shapley."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import attribnet, dataio, dtree, metrics, shapley
from .core import (AttributeTaxonomy, DataError, UtteranceRecord, load_taxonomy, read_metadata)

logger = logging.getLogger(__name__)

TASKS = ("detection", "attribution")
KINDS = ("cm", "attrib")
DEFAULT_DEPTH_GRID: list[int | None] = list(range(2, 13)) + [None]
EXCLUDED = "excluded"

# Published ASVspoof2019 LA figures; they need the real corpus and trained
# AASIST-family models, so they are printed for context and never checked.
REFERENCE_CONTEXT = [
    "detection, eval accuracy, p_a from SSL-AASIST: 99.7%",
    "attribution, Eval* accuracy, p_a from AASIST: 99.2%",
    "CM detection EER (AASIST, RB-AASIST, SSL-AASIST): 0.83%, 1.59%, 0.22%",
]


@dataclass
class Dataset:
    tax: AttributeTaxonomy
    records: list[UtteranceRecord]
    X: np.ndarray  # (n, D) rows aligned with records

    def __post_init__(self):
        self.utt_ids = np.array([r.utt_id for r in self.records])
        self.split = np.array([r.split for r in self.records])
        self.label = np.array([r.label for r in self.records])
        self.attack = np.array([r.attack_id or "" for r in self.records])
        if not np.all(np.isfinite(self.X)):
            raise DataError("embeddings contain non-finite values")

    def mask(self, split: str, spoof_only: bool = False) -> np.ndarray:
        m = self.split == split
        return m & (self.label == "spoof") if spoof_only else m

    def require_splits(self, *splits: str) -> None:
        for s in splits:
            if not self.mask(s).any():
                raise DataError(f"metadata has no {s!r} utterances")


def load_dataset(tax: AttributeTaxonomy, metadata: str | Path, embeddings: str | Path) -> Dataset:
    records = read_metadata(metadata)
    embs = dataio.read_embeddings(embeddings)
    return Dataset(tax, records, dataio.embedding_matrix(embs, [r.utt_id for r in records]))


def synthetic_dataset(spec: dataio.SyntheticSpec) -> Dataset:
    records, embs = dataio.generate_synthetic(spec)
    return Dataset(spec.taxonomy, records, dataio.embedding_matrix(embs))


# -- phase I --------------------------------------------------------------

def train_attribute_nets(ds: Dataset, cfg: attribnet.TrainConfig) -> list[attribnet.TrainResult]:
    """Train on spoofed train utterances; select checkpoints on spoofed dev ones."""
    ds.require_splits("train", "dev")
    tr, dv = ds.mask("train", True), ds.mask("dev", True)
    unknown = sorted(set(ds.attack[tr | dv]) - set(ds.tax.attacks))
    if unknown:
        raise DataError(f"train/dev attacks missing from the taxonomy: {', '.join(unknown)}")
    return attribnet.train_all(ds.tax, ds.X[tr], ds.attack[tr], ds.X[dv], ds.attack[dv], cfg)


def features(ds: Dataset, kind: str, nets: Sequence[attribnet.AttribNet] | None = None) -> np.ndarray:
    if kind == "cm":
        return ds.X
    if kind == "attrib":
        if nets is None:
            raise ValueError("attribute embeddings need trained networks")
        return attribnet.extract_embeddings(nets, ds.tax, ds.X)
    raise ValueError(f"unknown embedding kind {kind!r}")


def feature_names(tax: AttributeTaxonomy, kind: str, dim: int) -> tuple[list[str], list[str]]:
    if kind == "attrib":
        return tax.feature_names(), tax.feature_sets()
    return [f"dim_{i}" for i in range(dim)], ["cm"] * dim


# -- phase II -------------------------------------------------------------

@dataclass
class TaskData:
    """Features and targets for one task, split by train/dev/eval."""

    X: dict
    y: dict
    classes: list
    excluded: dict = field(default_factory=dict)
    positive: str | None = None


def detection_data(ds: Dataset, F: np.ndarray) -> TaskData:
    ds.require_splits("train", "dev")
    tr = ds.mask("train")
    if len(set(ds.label[tr])) < 2:
        raise DataError("detection needs bonafide and spoof training utterances")
    X, y = {}, {}
    for s in ("train", "dev", "eval"):
        m = ds.mask(s)
        X[s], y[s] = F[m], ds.label[m]
    return TaskData(X, y, ["bonafide", "spoof"], positive="spoof")


def eval_targets(attacks: Sequence[str], known: Sequence[str], eval_map: dict) -> np.ndarray:
    """Map eval attack ids onto known attacks; anything unmapped becomes ``EXCLUDED``."""
    known = set(known)
    out = []
    for a in attacks:
        if a in known:
            out.append(a)
        else:
            target = eval_map.get(a)
            out.append(target if target in known else EXCLUDED)
    return np.array(out, dtype=object)


def attribution_data(ds: Dataset, F: np.ndarray, eval_map: dict | None = None) -> TaskData:
    ds.require_splits("train", "dev")
    tr = ds.mask("train", True)
    known = sorted(set(ds.attack[tr]))
    if len(known) < 2:
        raise DataError("attribution needs at least two attack classes in train")
    eval_map = ds.tax.eval_map if eval_map is None else eval_map
    X, y, excluded = {}, {}, {}
    for s in ("train", "dev", "eval"):
        m = ds.mask(s, True)
        targets = eval_targets(ds.attack[m], known, eval_map)
        keep = targets != EXCLUDED
        X[s], y[s] = F[m][keep], targets[keep].astype(str)
        excluded[s] = int((~keep).sum())
    return TaskData(X, y, known, excluded)


@dataclass
class TaskResult:
    task: str
    kind: str
    search: dtree.DepthSearch
    rows: list[dict]

    @property
    def tree(self) -> dtree.DecisionTree:
        return self.search.tree

    def accuracy(self, split: str) -> float | None:
        for r in self.rows:
            if r["split"] == split:
                return r["accuracy"]
        return None


def evaluate(tree: dtree.DecisionTree, data: TaskData, splits=("dev", "eval")) -> list[dict]:
    rows = []
    for s in splits:
        X, y = data.X[s], data.y[s]
        row = {"split": s, "n": int(y.size), "excluded": data.excluded.get(s, 0),
               "accuracy": None, "f1_macro": None}
        if y.size:
            pred = dtree.predict(tree, X)
            row["accuracy"] = metrics.accuracy(pred, y)
            row["f1_macro"] = metrics.f1_macro(pred, y)
        rows.append(row)
    return rows


def fit_task(task: str, kind: str, data: TaskData, depth_grid: Sequence[int | None], seed: int) -> TaskResult:
    search = dtree.tune_max_depth(data.X["train"], data.y["train"], data.X["dev"], data.y["dev"],
                                  depth_grid, seed, data.classes)
    logger.info("%s/%s: depth %s, dev accuracy %.4f", task, kind, search.best_depth, search.best_accuracy)
    return TaskResult(task, kind, search, evaluate(search.tree, data))


def run_detection(ds: Dataset, F: np.ndarray, kind: str, depth_grid=DEFAULT_DEPTH_GRID, seed: int = 0) -> TaskResult:
    return fit_task("detection", kind, detection_data(ds, F), depth_grid, seed)


def run_attribution(ds: Dataset, F: np.ndarray, kind: str, depth_grid=DEFAULT_DEPTH_GRID, seed: int = 0,
                    eval_map: dict | None = None) -> TaskResult:
    return fit_task("attribution", kind, attribution_data(ds, F, eval_map), depth_grid, seed)


def explain(result: TaskResult, data: TaskData, names, sets, runs: int, seed: int) -> shapley.ShapleyReport:
    seeds = [seed + r for r in range(runs)]
    return shapley.importance_report(data.X["train"], data.y["train"], data.X["dev"],
                                     result.search.best_depth, seeds, names, sets, data.classes,
                                     positive_class=data.positive)


# -- reports --------------------------------------------------------------

def _num(v) -> str:
    return "" if v is None else f"{v:.9g}"


def metrics_csv(results: Sequence[TaskResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["task", "kind", "split", "n", "excluded", "accuracy", "f1_macro", "max_depth"])
    for res in results:
        for r in res.rows:
            w.writerow([res.task, res.kind, r["split"], r["n"], r["excluded"], _num(r["accuracy"]),
                        _num(r["f1_macro"]), "none" if res.search.best_depth is None else res.search.best_depth])
    return buf.getvalue()


def depth_table_csv(search: dtree.DepthSearch) -> str:
    lines = ["max_depth,dev_accuracy"]
    lines += [f"{'none' if d is None else d},{acc:.9g}" for d, acc in search.table]
    return "\n".join(lines) + "\n"


def report_text(results: Sequence[TaskResult], seed: int) -> str:
    lines = [f"seed: {seed}", ""]
    for res in results:
        lines.append(f"[{res.task} / {res.kind}]")
        lines.append(f"  max_depth: {res.search.best_depth if res.search.best_depth is not None else 'none'}")
        for r in res.rows:
            acc = "n/a" if r["accuracy"] is None else f"{100 * r['accuracy']:.2f}%"
            f1 = "n/a" if r["f1_macro"] is None else f"{r['f1_macro']:.4f}"
            lines.append(f"  {r['split']:<5} n={r['n']:<5} excluded={r['excluded']:<4} accuracy={acc} f1={f1}")
        lines.append("")
    lines.append("reference values on ASVspoof2019 LA (not reproduced here):")
    lines += [f"  {c}" for c in REFERENCE_CONTEXT]
    return "\n".join(lines) + "\n"


# -- full run -------------------------------------------------------------

@dataclass
class ExperimentConfig:
    taxonomy: str = "default"
    metadata: str | None = None
    embeddings: str | None = None
    synthetic: dict = field(default_factory=dict)
    tasks: list = field(default_factory=lambda: list(TASKS))
    kinds: list = field(default_factory=lambda: list(KINDS))
    train: attribnet.TrainConfig = field(default_factory=attribnet.TrainConfig)
    depth_grid: list = field(default_factory=lambda: list(DEFAULT_DEPTH_GRID))
    runs: int = 5
    seed: int = 0
    explain: bool = True

    def __post_init__(self):
        bad = set(self.tasks) - set(TASKS) or set(self.kinds) - set(KINDS)
        if bad:
            raise ValueError(f"unknown task or kind: {sorted(bad)}")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if (self.metadata is None) != (self.embeddings is None):
            raise ValueError("metadata and embeddings must be given together")

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


def synthetic_spec(tax: AttributeTaxonomy, options: dict, seed: int) -> dataio.SyntheticSpec:
    opts = dict(options)
    opts.setdefault("seed", seed)
    for key in ("counts", "bonafide"):
        if key in opts:
            opts[key] = tuple(opts[key])
    return dataio.SyntheticSpec(tax, **opts)


@dataclass
class RunOutput:
    results: list[TaskResult]
    nets: list[attribnet.TrainResult] | None
    reports: dict
    features: dict
    dataset: Dataset


def run(cfg: ExperimentConfig, out: str | Path | None = None) -> RunOutput:
    """Run every requested task/kind combination and write artefacts under ``out``."""
    tax = load_taxonomy(cfg.taxonomy)
    if cfg.metadata is not None:
        ds = load_dataset(tax, cfg.metadata, cfg.embeddings)
        source = {"metadata": cfg.metadata, "embeddings": cfg.embeddings}
    else:
        ds = synthetic_dataset(synthetic_spec(tax, cfg.synthetic, cfg.seed))
        source = {"synthetic": dataio.synthetic_spec_to_dict(synthetic_spec(tax, cfg.synthetic, cfg.seed))}

    nets = None
    feats = {}
    for kind in cfg.kinds:
        if kind == "attrib":
            train_cfg = attribnet.TrainConfig(**{**cfg.train.__dict__, "seed": cfg.seed})
            nets = train_attribute_nets(ds, train_cfg)
            feats[kind] = features(ds, kind, [r.net for r in nets])
        else:
            feats[kind] = features(ds, kind)

    results, reports = [], {}
    for task in cfg.tasks:
        for kind in cfg.kinds:
            F = feats[kind]
            data = detection_data(ds, F) if task == "detection" else attribution_data(ds, F)
            res = fit_task(task, kind, data, cfg.depth_grid, cfg.seed)
            results.append(res)
            if cfg.explain:
                names, sets = feature_names(tax, kind, F.shape[1])
                reports[task, kind] = explain(res, data, names, sets, cfg.runs, cfg.seed)

    if out is not None:
        write_run(Path(out), cfg, ds, nets, feats, results, reports, source)
    return RunOutput(results, nets, reports, feats, ds)


def write_run(out: Path, cfg, ds, nets, feats, results, reports, source) -> None:
    out.mkdir(parents=True, exist_ok=True)
    artifacts = []

    def put(rel: str, content: str | bytes | None = None):
        path = out / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(content, bytes):
            path.write_bytes(content)
        elif content is not None:
            path.write_text(content, encoding="utf-8", newline="\n")
        artifacts.append(rel)
        return path

    if nets is not None:
        for i, r in enumerate(nets):
            stem = f"nets/{i:02d}_{ds.tax.sets[i].name}"
            dataio.write_net(put(stem + ".panw"), r.net)
            dataio.write_train_log(put(stem + "_log.csv"), r.history)
        dataio.write_embeddings(put("attrib_embeddings.paeb"),
                                attribnet.extract_embeddings([r.net for r in nets], ds.tax,
                                                             ds.X, list(ds.utt_ids)))
    for res in results:
        stem = f"{res.task}_{res.kind}"
        dataio.write_tree(put(f"trees/{stem}.json"), res.tree)
        names, _ = feature_names(ds.tax, res.kind, res.tree.n_features)
        put(f"trees/{stem}.txt", dtree.render(res.tree, names))
        put(f"depth_{stem}.csv", depth_table_csv(res.search))
    for (task, kind), rep in reports.items():
        stem = f"shapley_{task}_{kind}"
        put(f"{stem}.csv", rep.to_csv())
        put(f"{stem}_plot.csv", rep.plot_csv())
        put(f"{stem}.txt", rep.to_text())
    put("metrics.csv", metrics_csv(results))
    put("report.txt", report_text(results, cfg.seed))
    manifest = {"config": cfg.to_dict(), "config_sha256": cfg.digest(), "source": source,
                "seeds": {"attribute_nets": [cfg.seed + i for i in range(ds.tax.n_sets)],
                          "trees": cfg.seed, "shapley_runs": [cfg.seed + r for r in range(cfg.runs)]},
                "artifacts": sorted(artifacts + ["manifest.json"])}
    put("manifest.json", json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
