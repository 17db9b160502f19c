"""Dataset ingestion: manifest parsing, embedding tables, vocabulary, splits.

Manifest: one record per line, UTF-8, tab-separated `key:value` fields
(values may contain spaces and colons). `id` and `hs6` are required for
training data; `D`, `T`, `C_cat` carry the raw text fields.

Embedding file: line 1 is `#embeddings v1 modality=<name> dim=<d> count=<n>`,
then one `<id> <d space-separated decimals>` row per sample. Floats are
written back with 17 significant digits so read(write(table)) is exact.
"""

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError, ValidationError
from .fusion import ModalityVector

HS6_RE = re.compile(r"^[0-9]{6}$")
TEXT_FIELDS = ("D", "T", "C_cat")
SPLIT_NAMES = ("train", "val", "test")


@dataclass
class SampleRecord:
    id: str
    hs6: str = ""
    text: dict[str, str] = field(default_factory=dict)


@dataclass
class EmbeddingTable:
    modality: str
    dim: int
    vectors: dict[str, np.ndarray]


@dataclass
class SplitAssignment:
    assignment: dict[str, str]  # id -> train | val | test
    seed: int
    ratios: tuple[float, float, float]

    def ids(self, split: str) -> list[str]:
        if split not in SPLIT_NAMES:
            raise UsageError(f"unknown split {split!r}, expected one of {SPLIT_NAMES}")
        return [i for i, s in self.assignment.items() if s == split]


def parse_manifest(path: str, require_label: bool = True) -> list[SampleRecord]:
    """One validated SampleRecord per non-empty line; errors cite line numbers."""
    records = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            fields: dict[str, str] = {}
            for part in line.split("\t"):
                if ":" not in part:
                    raise ValidationError(f"{path}:{lineno}: field {part!r} is not key:value")
                key, value = part.split(":", 1)
                if key in fields:
                    raise ValidationError(f"{path}:{lineno}: duplicate field {key!r}")
                fields[key] = value
            if "id" not in fields or not fields["id"]:
                raise ValidationError(f"{path}:{lineno}: missing id field")
            rid = fields.pop("id")
            if rid in seen:
                raise ValidationError(
                    f"{path}:{lineno}: duplicate id {rid!r} (first seen on line {seen[rid]})"
                )
            seen[rid] = lineno
            hs6 = fields.pop("hs6", "")
            if require_label and not hs6:
                raise ValidationError(f"{path}:{lineno}: missing hs6 field")
            if hs6 and not HS6_RE.match(hs6):
                raise ValidationError(f"{path}:{lineno}: hs6 {hs6!r} is not a 6-digit code")
            text = {}
            for key in TEXT_FIELDS:
                if key in fields:
                    text[key] = fields.pop(key)
            if fields:
                raise ValidationError(f"{path}:{lineno}: unknown fields {sorted(fields)}")
            records.append(SampleRecord(id=rid, hs6=hs6, text=text))
    return records


def write_manifest(records: list[SampleRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            parts = [f"id:{rec.id}"]
            if rec.hs6:
                parts.append(f"hs6:{rec.hs6}")
            for key in TEXT_FIELDS:
                if key in rec.text:
                    parts.append(f"{key}:{rec.text[key]}")
            fh.write("\t".join(parts) + "\n")


def read_embedding_file(path: str) -> EmbeddingTable:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        m = re.match(r"^#embeddings v1 modality=(\S+) dim=([0-9]+) count=([0-9]+)$", header)
        if not m:
            raise ValidationError(f"{path}:1: bad embedding header: {header!r}")
        modality, dim, count = m.group(1), int(m.group(2)), int(m.group(3))
        vectors: dict[str, np.ndarray] = {}
        for lineno, raw in enumerate(fh, start=2):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split(" ")
            rid = parts[0]
            if rid in vectors:
                raise ValidationError(f"{path}:{lineno}: duplicate id {rid!r}")
            if len(parts) - 1 != dim:
                raise ValidationError(
                    f"{path}:{lineno}: row {rid!r} has {len(parts) - 1} values, header says dim={dim}"
                )
            try:
                vec = np.array([float(v) for v in parts[1:]], dtype=np.float64)
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: row {rid!r}: bad float: {exc}") from exc
            if not np.all(np.isfinite(vec)):
                raise ValidationError(f"{path}:{lineno}: row {rid!r} has non-finite values")
            vectors[rid] = vec
    if len(vectors) != count:
        raise ValidationError(
            f"{path}: header says count={count} but body has {len(vectors)} rows"
        )
    return EmbeddingTable(modality=modality, dim=dim, vectors=vectors)


def write_embedding_file(table: EmbeddingTable, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            f"#embeddings v1 modality={table.modality} dim={table.dim} count={len(table.vectors)}\n"
        )
        for rid, vec in table.vectors.items():
            fh.write(rid + " " + " ".join("%.17g" % v for v in vec) + "\n")


def build_label_vocab(records: list[SampleRecord]) -> dict[str, int]:
    """Distinct hs6 codes sorted lexicographically, indexed from 0."""
    if not records:
        raise UsageError("cannot build a vocabulary from zero records")
    codes = sorted({rec.hs6 for rec in records if rec.hs6})
    if not codes:
        raise UsageError("no labeled records to build a vocabulary from")
    return {code: i for i, code in enumerate(codes)}


def vocab_labels(vocab: dict[str, int]) -> list[str]:
    labels = [""] * len(vocab)
    for code, i in vocab.items():
        labels[i] = code
    return labels


def split_dataset(
    records: list[SampleRecord],
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
    stratify: bool = False,
) -> SplitAssignment:
    """Seeded shuffle split: floor(r_val*n) val, floor(r_test*n) test, rest train.

    With stratify=True the floor rule is applied per label instead, which can
    change the global sizes by at most one per class.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise UsageError(f"ratios must sum to 1, got {ratios}")
    if any(r < 0 for r in ratios):
        raise UsageError(f"ratios must be non-negative, got {ratios}")
    n = len(records)
    if n < 3:
        raise UsageError(f"need at least 3 records to split, got {n}")
    rng = np.random.default_rng(seed)
    assignment: dict[str, str] = {}

    def assign(ids: list[str]) -> None:
        order = rng.permutation(len(ids))
        n_val = int(len(ids) * ratios[1])
        n_test = int(len(ids) * ratios[2])
        n_train = len(ids) - n_val - n_test
        for pos, idx in enumerate(order):
            if pos < n_train:
                assignment[ids[idx]] = "train"
            elif pos < n_train + n_val:
                assignment[ids[idx]] = "val"
            else:
                assignment[ids[idx]] = "test"

    if stratify:
        by_label: dict[str, list[str]] = {}
        for rec in records:
            by_label.setdefault(rec.hs6, []).append(rec.id)
        for label in sorted(by_label):
            assign(by_label[label])
    else:
        assign([rec.id for rec in records])
    return SplitAssignment(assignment=assignment, seed=seed, ratios=ratios)


def assemble_dataset(
    records: list[SampleRecord],
    tables: dict[str, EmbeddingTable],
    split: SplitAssignment | None,
    vocab: dict[str, int],
) -> dict[str, list[tuple[list[ModalityVector], int]]]:
    """Join records with their embedding vectors, label-encoded, per split.

    Samples keep manifest order within each split. A record missing from any
    configured table is an error naming `id/modality`.
    """
    if not tables:
        raise UsageError("assemble_dataset needs at least one embedding table")
    out: dict[str, list] = {name: [] for name in SPLIT_NAMES}
    for rec in records:
        if rec.hs6 not in vocab:
            raise UsageError(f"record {rec.id!r} has label {rec.hs6!r} outside the vocabulary")
        sample = []
        for modality in tables:
            table = tables[modality]
            if rec.id not in table.vectors:
                raise ValidationError(f"missing embedding: {rec.id}/{modality}")
            sample.append(ModalityVector(modality, table.vectors[rec.id]))
        if split is None:
            where = "train"
        elif rec.id in split.assignment:
            where = split.assignment[rec.id]
        else:
            raise UsageError(f"record {rec.id!r} is not covered by the split")
        out[where].append((sample, vocab[rec.hs6]))
    return out
