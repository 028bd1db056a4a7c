"""Domain types, the attribute taxonomy and ground-truth labelling."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import yaml

SIMPLEX_TOL = 1e-6
SPLITS = ("train", "dev", "eval")
LABELS = ("bonafide", "spoof")


class ProbAttrError(Exception):
    """Base class for all package errors."""


class DataError(ProbAttrError):
    """Malformed or inconsistent input data."""


class TaxonomyError(DataError):
    pass


class ShapeError(DataError, ValueError):
    pass


class SimplexError(DataError, ValueError):
    pass


class NumericalError(ProbAttrError):
    """A numerical failure such as a NaN loss."""


class UnknownAttackError(TaxonomyError, KeyError):
    def __init__(self, attack_id: str):
        super().__init__(f"unknown attack id {attack_id!r}")
        self.attack_id = attack_id

    def __str__(self) -> str:
        return self.args[0]


@dataclass(frozen=True)
class CmEmbedding:
    utt_id: str
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ShapeError(f"{self.utt_id}: embedding must be a 1-D vector")
        if not np.all(np.isfinite(values)):
            raise DataError(f"{self.utt_id}: embedding has non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class AttributeSetDef:
    name: str
    attributes: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))
        if len(self.attributes) < 2:
            raise TaxonomyError(f"set {self.name!r} needs at least 2 attributes")
        if len(set(self.attributes)) != len(self.attributes):
            raise TaxonomyError(f"set {self.name!r} has duplicate attribute names")

    @property
    def size(self) -> int:
        return len(self.attributes)


@dataclass(frozen=True)
class AttributeTaxonomy:
    """Ordered attribute sets plus the attack -> attribute table.

    ``eval_map`` lists evaluation attack ids that are renamed copies of a
    known attack (e.g. ``A16 -> A04``).
    """

    sets: tuple[AttributeSetDef, ...]
    attack_table: Mapping[str, tuple[str, ...]]
    eval_map: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "sets", tuple(self.sets))
        if not self.sets:
            raise TaxonomyError("taxonomy has no attribute sets")
        names = [s.name for s in self.sets]
        if len(set(names)) != len(names):
            raise TaxonomyError("duplicate attribute set names")
        table = {}
        for attack_id, row in self.attack_table.items():
            row = tuple(row)
            if len(row) != len(self.sets):
                raise TaxonomyError(
                    f"attack {attack_id!r} lists {len(row)} attributes, expected {len(self.sets)}"
                )
            for s, value in zip(self.sets, row):
                if value not in s.attributes:
                    raise TaxonomyError(
                        f"attack {attack_id!r}: {value!r} is not an attribute of set {s.name!r}"
                    )
            table[str(attack_id)] = row
        object.__setattr__(self, "attack_table", table)
        emap = {str(k): str(v) for k, v in dict(self.eval_map).items()}
        for alias, target in emap.items():
            if target not in table:
                raise TaxonomyError(f"eval_map {alias!r} -> unknown attack {target!r}")
        object.__setattr__(self, "eval_map", emap)

    @property
    def n_sets(self) -> int:
        return len(self.sets)

    @property
    def sizes(self) -> list[int]:
        return [s.size for s in self.sets]

    @property
    def total(self) -> int:
        return sum(self.sizes)

    @property
    def offsets(self) -> list[int]:
        return [0] + list(np.cumsum(self.sizes))

    @property
    def attacks(self) -> list[str]:
        return list(self.attack_table)

    def feature_names(self) -> list[str]:
        """Flat attribute labels such as ``LPC(Outputs)``, in embedding order."""
        return [f"{a}({s.name})" for s in self.sets for a in s.attributes]

    def feature_sets(self) -> list[str]:
        return [s.name for s in self.sets for _ in s.attributes]

    def split(self, vector: np.ndarray) -> list[np.ndarray]:
        vector = np.asarray(vector)
        if vector.shape[-1] != self.total:
            raise ShapeError(f"expected {self.total} values, got {vector.shape[-1]}")
        off = self.offsets
        return [vector[..., off[i]:off[i + 1]] for i in range(self.n_sets)]

    def to_dict(self) -> dict:
        out = {
            "sets": [{"name": s.name, "attributes": list(s.attributes)} for s in self.sets],
            "attacks": {k: list(v) for k, v in self.attack_table.items()},
        }
        if self.eval_map:
            out["eval_map"] = dict(self.eval_map)
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "AttributeTaxonomy":
        try:
            sets = [AttributeSetDef(str(s["name"]), [str(a) for a in s["attributes"]])
                    for s in data["sets"]]
            attacks = {str(k): [str(a) for a in v] for k, v in (data.get("attacks") or {}).items()}
        except (KeyError, TypeError) as exc:
            raise TaxonomyError(f"malformed taxonomy: {exc}") from exc
        return cls(sets, attacks, data.get("eval_map") or {})


@dataclass(frozen=True)
class ProbAttributeEmbedding:
    utt_id: str
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class UtteranceRecord:
    utt_id: str
    split: str
    label: str
    attack_id: str | None = None

    def __post_init__(self):
        if self.split not in SPLITS:
            raise DataError(f"{self.utt_id}: unknown split {self.split!r}")
        if self.label not in LABELS:
            raise DataError(f"{self.utt_id}: unknown label {self.label!r}")
        if (self.label == "bonafide") != (self.attack_id is None):
            raise DataError(f"{self.utt_id}: attack_id must be empty exactly for bonafide")

    @property
    def is_spoof(self) -> bool:
        return self.label == "spoof"


def load_taxonomy(path: str | Path) -> AttributeTaxonomy:
    """Load a taxonomy YAML file; the name ``default`` selects the shipped one."""
    if str(path) == "default":
        text = resources.files("probattr").joinpath("data/default_taxonomy.yaml").read_text("utf-8")
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot read taxonomy {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise TaxonomyError(f"{path}: {exc}") from exc
    if not isinstance(data, Mapping):
        raise TaxonomyError(f"{path}: expected a mapping at top level")
    return AttributeTaxonomy.from_dict(data)


def default_taxonomy() -> AttributeTaxonomy:
    return load_taxonomy("default")


def dump_taxonomy(tax: AttributeTaxonomy) -> str:
    return yaml.safe_dump(tax.to_dict(), sort_keys=False, allow_unicode=True)


def save_taxonomy(tax: AttributeTaxonomy, path: str | Path) -> None:
    Path(path).write_text(dump_taxonomy(tax), encoding="utf-8", newline="\n")


def ground_truth_for(attack_id: str, tax: AttributeTaxonomy) -> list[np.ndarray]:
    """One-hot target per attribute set for a spoofing attack."""
    try:
        row = tax.attack_table[attack_id]
    except KeyError:
        raise UnknownAttackError(attack_id) from None
    out = []
    for s, value in zip(tax.sets, row):
        onehot = np.zeros(s.size)
        onehot[s.attributes.index(value)] = 1.0
        out.append(onehot)
    return out


def ground_truth_index(attack_id: str, tax: AttributeTaxonomy, set_idx: int) -> int:
    try:
        value = tax.attack_table[attack_id][set_idx]
    except KeyError:
        raise UnknownAttackError(attack_id) from None
    return tax.sets[set_idx].attributes.index(value)


def concat_embedding(per_set_probs: Sequence[Sequence[float]], tax: AttributeTaxonomy,
                     utt_id: str = "") -> ProbAttributeEmbedding:
    if len(per_set_probs) != tax.n_sets:
        raise ShapeError(f"expected {tax.n_sets} slices, got {len(per_set_probs)}")
    parts = []
    for s, probs in zip(tax.sets, per_set_probs):
        probs = np.asarray(probs, dtype=np.float64)
        if probs.shape != (s.size,):
            raise ShapeError(f"set {s.name!r}: expected {s.size} values, got {probs.shape}")
        check_simplex(probs, s.name)
        parts.append(probs)
    return ProbAttributeEmbedding(utt_id, np.concatenate(parts))


def check_simplex(probs: np.ndarray, name: str, tol: float = SIMPLEX_TOL) -> None:
    total = float(np.sum(probs))
    if np.any(probs < 0) or abs(total - 1.0) > tol:
        raise SimplexError(f"set {name!r} is not on the probability simplex (sum={total:.9g})")


# -- metadata -------------------------------------------------------------

METADATA_HEADER = ["utt_id", "split", "label", "attack_id"]


def read_metadata(path: str | Path) -> list[UtteranceRecord]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read metadata {path}: {exc}") from exc
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != METADATA_HEADER:
        raise DataError(f"{path}: expected header {','.join(METADATA_HEADER)}")
    records, seen = [], set()
    for row_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 4:
            raise DataError(f"{path}: row {row_no}: expected 4 fields, got {len(row)}")
        utt_id, split, label, attack = row
        if utt_id in seen:
            raise DataError(f"{path}: row {row_no}: duplicate utt_id {utt_id!r}")
        seen.add(utt_id)
        try:
            records.append(UtteranceRecord(utt_id, split, label, attack or None))
        except DataError as exc:
            raise DataError(f"{path}: row {row_no}: {exc}") from None
    return records


def write_metadata(records: Iterable[UtteranceRecord], path: str | Path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METADATA_HEADER)
    for r in records:
        writer.writerow([r.utt_id, r.split, r.label, r.attack_id or ""])
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="\n")
