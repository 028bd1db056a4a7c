"""Embedding, network and tree files, plus the synthetic dataset generator.

Binary embedding layout (all integers little-endian)::

    b"PAEB" | version u32 | dim u32 | count u32
    count x ( id_len u16 | id bytes (UTF-8) | dim x float32 )

The CSV form is ``utt_id,dim_0,...,dim_{D-1}`` with 9 significant digits.
"""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .attribnet import AttribNet
from .core import (SPLITS, AttributeTaxonomy, CmEmbedding, DataError, UtteranceRecord)
from .dtree import DecisionTree

EMB_MAGIC = b"PAEB"
EMB_VERSION = 1
NET_MAGIC = b"PANW"
NET_VERSION = 1
TREE_FORMAT = "probattr-tree"
TREE_VERSION = 1


class FormatError(DataError):
    """File content does not match the expected layout."""


class MagicError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class DuplicateIdError(FormatError):
    pass


class NonFiniteError(FormatError):
    pass


class VersionError(FormatError):
    pass


class StructureError(FormatError):
    pass


# -- embeddings -----------------------------------------------------------

def _fmt(v: float) -> str:
    return f"{v:.9g}"


def write_embeddings(path: str | Path, embeddings: Sequence, fmt: str = "binary") -> None:
    """Write records with ``utt_id`` and ``values`` in binary (default) or CSV form."""
    dims = {len(e.values) for e in embeddings}
    if len(dims) > 1:
        raise DataError(f"inconsistent embedding dimensions {sorted(dims)}")
    dim = dims.pop() if dims else 0
    if fmt == "binary":
        parts = [EMB_MAGIC, struct.pack("<III", EMB_VERSION, dim, len(embeddings))]
        for e in embeddings:
            uid = e.utt_id.encode("utf-8")
            parts.append(struct.pack("<H", len(uid)))
            parts.append(uid)
            parts.append(np.asarray(e.values, dtype="<f4").tobytes())
        Path(path).write_bytes(b"".join(parts))
    elif fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["utt_id"] + [f"dim_{i}" for i in range(dim)])
        for e in embeddings:
            w.writerow([e.utt_id] + [_fmt(v) for v in np.asarray(e.values, dtype=np.float64)])
        Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="\n")
    else:
        raise ValueError(f"unknown embedding format {fmt!r}")


def read_embeddings(path: str | Path) -> list[CmEmbedding]:
    """Read a binary or CSV embedding file (detected from the first four bytes)."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read embeddings {path}: {exc}") from exc
    if data[:4] == EMB_MAGIC:
        return _read_binary(data, path)
    if data[:6] == b"utt_id":
        return _read_csv(data, path)
    raise MagicError(f"{path}: byte offset 0: unrecognised magic {data[:4]!r}")


def _read_binary(data: bytes, path) -> list[CmEmbedding]:
    if len(data) < 16:
        raise TruncatedError(f"{path}: byte offset {len(data)}: header truncated")
    version, dim, count = struct.unpack_from("<III", data, 4)
    if version != EMB_VERSION:
        raise VersionError(f"{path}: byte offset 4: unsupported version {version}")
    out, seen = [], set()
    pos = 16
    for i in range(count):
        start = pos
        if pos + 2 > len(data):
            raise TruncatedError(f"{path}: byte offset {pos}: record {i} truncated")
        (n,) = struct.unpack_from("<H", data, pos)
        pos += 2
        end = pos + n + 4 * dim
        if end > len(data):
            raise TruncatedError(f"{path}: byte offset {start}: record {i} truncated")
        try:
            uid = data[pos:pos + n].decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{path}: byte offset {pos}: utt_id is not valid UTF-8") from None
        pos += n
        values = np.frombuffer(data, dtype="<f4", count=dim, offset=pos).astype(np.float64)
        if uid in seen:
            raise DuplicateIdError(f"{path}: byte offset {start}: duplicate utt_id {uid!r}")
        if not np.all(np.isfinite(values)):
            bad = int(np.flatnonzero(~np.isfinite(values))[0])
            raise NonFiniteError(f"{path}: byte offset {pos + 4 * bad}: non-finite value in {uid!r}")
        seen.add(uid)
        out.append(CmEmbedding(uid, values))
        pos = end
    if pos != len(data):
        raise FormatError(f"{path}: byte offset {pos}: {len(data) - pos} trailing bytes")
    return out


def _read_csv(data: bytes, path) -> list[CmEmbedding]:
    reader = csv.reader(io.StringIO(data.decode("utf-8")))
    header = next(reader)
    dim = len(header) - 1
    out, seen = [], set()
    for row_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != dim + 1:
            raise FormatError(f"{path}: row {row_no}: expected {dim + 1} fields, got {len(row)}")
        uid = row[0]
        try:
            values = np.array([float(v) for v in row[1:]])
        except ValueError as exc:
            raise FormatError(f"{path}: row {row_no}: {exc}") from None
        if uid in seen:
            raise DuplicateIdError(f"{path}: row {row_no}: duplicate utt_id {uid!r}")
        if not np.all(np.isfinite(values)):
            raise NonFiniteError(f"{path}: row {row_no}: non-finite value in {uid!r}")
        seen.add(uid)
        out.append(CmEmbedding(uid, values))
    return out


def embedding_matrix(embeddings: Sequence[CmEmbedding], utt_ids: Sequence[str] | None = None) -> np.ndarray:
    """Stack embeddings into an (n, D) array, optionally reordered by ``utt_ids``."""
    if utt_ids is None:
        return np.array([e.values for e in embeddings]).reshape(len(embeddings), -1)
    index = {e.utt_id: e for e in embeddings}
    missing = [u for u in utt_ids if u not in index]
    if missing:
        raise DataError(f"{len(missing)} utterances have no embedding (first: {missing[0]!r})")
    return np.array([index[u].values for u in utt_ids]).reshape(len(utt_ids), -1)


# -- attribute networks ---------------------------------------------------

def write_net(path: str | Path, net: AttribNet) -> None:
    name = net.name.encode("utf-8")
    parts = [NET_MAGIC, struct.pack("<I", NET_VERSION), struct.pack("<H", len(name)), name,
             struct.pack("<I", len(net.weights))]
    for w in net.weights:
        parts.append(struct.pack("<II", *w.shape))
    for w, b in zip(net.weights, net.biases):
        parts.append(np.asarray(w, dtype="<f4").tobytes())
        parts.append(np.asarray(b, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_net(path: str | Path) -> AttribNet:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read network {path}: {exc}") from exc
    if data[:4] != NET_MAGIC:
        raise MagicError(f"{path}: byte offset 0: not a network file")
    try:
        (version,) = struct.unpack_from("<I", data, 4)
        if version != NET_VERSION:
            raise VersionError(f"{path}: byte offset 4: unsupported version {version}")
        (n,) = struct.unpack_from("<H", data, 8)
        name = data[10:10 + n].decode("utf-8")
        pos = 10 + n
        (layers,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shapes = []
        for _ in range(layers):
            shapes.append(struct.unpack_from("<II", data, pos))
            pos += 8
        weights, biases = [], []
        for rows, cols in shapes:
            weights.append(np.frombuffer(data, "<f4", rows * cols, pos).reshape(rows, cols).astype(np.float64))
            pos += 4 * rows * cols
            biases.append(np.frombuffer(data, "<f4", rows, pos).astype(np.float64))
            pos += 4 * rows
    except (struct.error, ValueError) as exc:
        raise TruncatedError(f"{path}: truncated network file ({exc})") from None
    if pos != len(data):
        raise FormatError(f"{path}: byte offset {pos}: trailing bytes")
    if not all(np.all(np.isfinite(p)) for p in weights + biases):
        raise NonFiniteError(f"{path}: non-finite weights")
    return AttribNet(weights, biases, name)


def write_train_log(path: str | Path, history: Iterable[tuple[int, float, float]]) -> None:
    lines = ["epoch,train_loss,dev_eer"]
    lines += [f"{e},{_fmt(loss)},{_fmt(d)}" for e, loss, d in history]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


# -- trees ----------------------------------------------------------------

def tree_to_dict(tree: DecisionTree) -> dict:
    nodes = []
    for i in range(tree.n_nodes):
        node = {"id": i, "counts": [int(c) for c in tree.counts[i]]}
        if not tree.is_leaf(i):
            node.update(feature=int(tree.feature[i]), threshold=float(tree.threshold[i]),
                        left=int(tree.left[i]), right=int(tree.right[i]))
        nodes.append(node)
    return {"format": TREE_FORMAT, "version": TREE_VERSION, "n_features": tree.n_features,
            "classes": list(tree.classes), "max_depth": tree.max_depth, "seed": tree.seed,
            "nodes": nodes}


def tree_from_dict(d: Mapping) -> DecisionTree:
    if d.get("format") != TREE_FORMAT:
        raise FormatError("not a decision tree document")
    if d.get("version") != TREE_VERSION:
        raise VersionError(f"unsupported tree version {d.get('version')!r}")
    try:
        nodes = d["nodes"]
        n = len(nodes)
        k = len(d["classes"])
        feature = np.full(n, -1, dtype=np.int64)
        threshold = np.zeros(n)
        left = np.full(n, -1, dtype=np.int64)
        right = np.full(n, -1, dtype=np.int64)
        counts = np.zeros((n, k), dtype=np.int64)
        for i, node in enumerate(nodes):
            if node["id"] != i:
                raise StructureError(f"node {i} has id {node['id']}")
            if len(node["counts"]) != k:
                raise StructureError(f"node {i} has {len(node['counts'])} class counts, expected {k}")
            counts[i] = node["counts"]
            if "left" in node:
                feature[i] = node["feature"]
                threshold[i] = node["threshold"]
                left[i] = node["left"]
                right[i] = node["right"]
        tree = DecisionTree(feature, threshold, left, right, counts, int(d["n_features"]),
                            list(d["classes"]), d.get("max_depth"), int(d.get("seed", 0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise StructureError(f"malformed tree: {exc}") from None
    if n == 0:
        raise StructureError("tree has no nodes")
    try:
        tree.validate()
    except DataError as exc:
        raise StructureError(str(exc)) from None
    return tree


def write_tree(path: str | Path, tree: DecisionTree) -> None:
    Path(path).write_text(json.dumps(tree_to_dict(tree), indent=1) + "\n", encoding="utf-8",
                          newline="\n")


def read_tree(path: str | Path) -> DecisionTree:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read tree {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    try:
        return tree_from_dict(d)
    except FormatError as exc:
        raise type(exc)(f"{path}: {exc}") from None


# -- synthetic data -------------------------------------------------------

@dataclass
class SyntheticSpec:
    """Gaussian-cluster stand-in for a countermeasure embedding corpus.

    ``counts`` gives utterances per known attack for (train, dev, eval);
    ``per_attack`` overrides it for individual attacks. Eval-only aliases
    from the taxonomy's ``eval_map`` reuse their target's centroid, and
    ``unknown_attacks`` adds eval-only attacks with fresh centroids.
    """

    taxonomy: AttributeTaxonomy
    counts: tuple[int, int, int] = (200, 50, 50)
    bonafide: tuple[int, int, int] = (200, 50, 50)
    per_attack: dict = field(default_factory=dict)
    alias_count: int = 0
    unknown_attacks: int = 0
    unknown_count: int = 0
    dim: int = 160
    scale: float = 10.0
    noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("class-separation scale must be positive")
        if self.noise < 0:
            raise ValueError("noise scale must be non-negative")
        every = [*self.counts, *self.bonafide, self.alias_count, self.unknown_count,
                 *(c for v in self.per_attack.values() for c in v)]
        if any(c < 0 for c in every):
            raise ValueError("counts must be non-negative")
        if self.dim < self.taxonomy.n_sets + 1:
            raise ValueError(f"dimension {self.dim} is too small for {self.taxonomy.n_sets} attribute blocks")

    def attack_counts(self, attack_id: str) -> tuple[int, int, int]:
        return tuple(self.per_attack.get(attack_id, self.counts))


def _blocks(dim: int, n_sets: int) -> list[slice]:
    # one block per attribute set plus a final attack-specific block
    width = dim // (n_sets + 1)
    edges = [i * width for i in range(n_sets + 1)] + [dim]
    return [slice(edges[i], edges[i + 1]) for i in range(n_sets + 1)]


def _direction(rng: np.random.Generator, n: int, scale: float) -> np.ndarray:
    v = rng.standard_normal(n)
    return scale * v / np.linalg.norm(v)


def generate_synthetic(spec: SyntheticSpec) -> tuple[list[UtteranceRecord], list[CmEmbedding]]:
    """Draw labelled embeddings around seeded class centroids.

    A spoofing attack's centroid is assembled block by block: each attribute
    set owns a coordinate block, and every attribute value owns one random
    direction of norm ``scale`` in that block, so attacks sharing an
    attribute share that block. A last block holds an attack-specific
    direction. Bonafide speech sits at the origin of every attribute block
    and has its own direction in the last block.
    """
    tax = spec.taxonomy
    total = (sum(spec.bonafide) + sum(sum(spec.attack_counts(a)) for a in tax.attacks)
             + spec.alias_count * len(tax.eval_map) + spec.unknown_attacks * spec.unknown_count)
    if total == 0:
        raise ValueError("synthetic spec produces no utterances")
    rng = np.random.default_rng(spec.seed)
    blocks = _blocks(spec.dim, tax.n_sets)
    width = [b.stop - b.start for b in blocks]

    protos = [{a: _direction(rng, width[i], spec.scale) for a in s.attributes}
              for i, s in enumerate(tax.sets)]
    centroids = {}
    for attack, row in tax.attack_table.items():
        c = np.empty(spec.dim)
        for i, value in enumerate(row):
            c[blocks[i]] = protos[i][value]
        c[blocks[-1]] = _direction(rng, width[-1], spec.scale)
        centroids[attack] = c

    def random_centroid():
        c = np.empty(spec.dim)
        for i, b in enumerate(blocks):
            c[b] = _direction(rng, width[i], spec.scale)
        return c

    # bonafide speech carries no trace of any generation module
    bonafide_centroid = np.zeros(spec.dim)
    bonafide_centroid[blocks[-1]] = _direction(rng, width[-1], spec.scale)
    unknown = {f"U{i + 1:02d}": random_centroid() for i in range(spec.unknown_attacks)}

    records, embeddings = [], []
    prefix = {"train": "T", "dev": "D", "eval": "E"}
    for s, split in enumerate(SPLITS):
        groups = [(None, bonafide_centroid, spec.bonafide[s])]
        groups += [(a, centroids[a], spec.attack_counts(a)[s]) for a in tax.attacks]
        if split == "eval":
            groups += [(alias, centroids[target], spec.alias_count) for alias, target in tax.eval_map.items()]
            groups += [(u, c, spec.unknown_count) for u, c in unknown.items()]
        n = 0
        for attack, centroid, count in groups:
            noise = rng.standard_normal((count, spec.dim)) * spec.noise
            values = (centroid + noise).astype(np.float32).astype(np.float64)
            for v in values:
                n += 1
                uid = f"{prefix[split]}_{n:06d}"
                label = "bonafide" if attack is None else "spoof"
                records.append(UtteranceRecord(uid, split, label, attack))
                embeddings.append(CmEmbedding(uid, v))
    return records, embeddings


def synthetic_spec_to_dict(spec: SyntheticSpec) -> dict:
    return {"counts": list(spec.counts), "bonafide": list(spec.bonafide),
            "per_attack": {k: list(v) for k, v in spec.per_attack.items()},
            "alias_count": spec.alias_count, "unknown_attacks": spec.unknown_attacks,
            "unknown_count": spec.unknown_count, "dim": spec.dim, "scale": spec.scale,
            "noise": spec.noise, "seed": spec.seed}

