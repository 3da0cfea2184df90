"""Labeled 512-d embeddings: manifests, the binary cache, and split construction.

Cache layout (all integers little-endian):
  magic "CLPE" | version u32 = 1 | dim u32 = 512 | count u32 | records...
  record: id_len u16 | id UTF-8 | label u8 (0 real, 1 fake) | cat_len u16 |
          category UTF-8 | dim x float32
"""

from __future__ import annotations

import csv
import hashlib
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import CacheCorruptionError, CacheFormatError, ManifestError, SplitError
from .labels import Label, parse_label

CACHE_MAGIC = b"CLPE"
CACHE_VERSION = 1
EMBED_DIM = 512


@dataclass
class EmbeddingRecord:
    """One image's identity, label, category tag, and feature vector."""

    id: str
    label: Label
    vector: np.ndarray
    category: str = ""

    def __post_init__(self):
        if not self.id:
            raise ValueError("record id must be non-empty")
        self.vector = np.ascontiguousarray(self.vector, dtype=np.float32)
        if self.vector.shape != (EMBED_DIM,):
            raise ValueError(
                f"vector must have exactly {EMBED_DIM} elements, "
                f"got shape {self.vector.shape}"
            )
        if not np.all(np.isfinite(self.vector)):
            raise ValueError(f"record {self.id!r} has non-finite vector elements")


class Source(str, Enum):
    CIFAKE = "cifake"
    CUSTOM = "custom"
    OTHER = "other"


@dataclass
class ManifestRow:
    path: str
    label: Label
    category: str = ""


@dataclass
class DatasetManifest:
    name: str
    rows: list[ManifestRow] = field(default_factory=list)
    source: Source = Source.OTHER


def load_manifest(path: str | Path, source: Source = Source.OTHER) -> DatasetManifest:
    """Parse a `path,label,category` CSV; row order preserved."""
    path = Path(path)
    rows: list[ManifestRow] = []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["path", "label", "category"]:
            raise ManifestError(
                f"expected header 'path,label,category', got {header}", line=1
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ManifestError(f"expected 3 fields, got {len(row)}", line=lineno)
            p, label_text, category = row[0], row[1], row[2]
            if not p:
                raise ManifestError("empty path", line=lineno)
            try:
                label = parse_label(label_text)
            except ValueError as exc:
                raise ManifestError(str(exc), line=lineno) from exc
            if p in seen:
                raise ManifestError(f"duplicate path {p!r}", line=lineno)
            seen.add(p)
            rows.append(ManifestRow(path=p, label=label, category=category))
    return DatasetManifest(name=path.stem, rows=rows, source=source)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path", "label", "category"])
        for row in manifest.rows:
            writer.writerow([row.path, str(row.label), row.category])


# --- binary cache --------------------------------------------------------------


def write_cache(records: list[EmbeddingRecord], path: str | Path) -> int:
    """Serialize records to the CLPE layout; returns bytes written."""
    seen: set[str] = set()
    for rec in records:
        if rec.id in seen:
            raise ValueError(f"duplicate record id {rec.id!r}")
        seen.add(rec.id)
    chunks = [CACHE_MAGIC, struct.pack("<III", CACHE_VERSION, EMBED_DIM, len(records))]
    for rec in records:
        id_bytes = rec.id.encode("utf-8")
        cat_bytes = rec.category.encode("utf-8")
        if len(id_bytes) > 0xFFFF or len(cat_bytes) > 0xFFFF:
            raise ValueError(f"id/category too long for record {rec.id!r}")
        chunks.append(struct.pack("<H", len(id_bytes)))
        chunks.append(id_bytes)
        chunks.append(struct.pack("<B", rec.label.value))
        chunks.append(struct.pack("<H", len(cat_bytes)))
        chunks.append(cat_bytes)
        chunks.append(np.ascontiguousarray(rec.vector, dtype="<f4").tobytes())
    blob = b"".join(chunks)
    Path(path).write_bytes(blob)
    return len(blob)


def _take(buf: bytes, offset: int, n: int, what: str) -> tuple[bytes, int]:
    if offset + n > len(buf):
        raise CacheCorruptionError(f"truncated cache: needed {n} bytes for {what}", offset)
    return buf[offset : offset + n], offset + n


def read_cache(path: str | Path) -> list[EmbeddingRecord]:
    """Exact inverse of write_cache."""
    buf = Path(path).read_bytes()
    if buf[:4] != CACHE_MAGIC:
        raise CacheFormatError(f"bad magic {buf[:4]!r}: not an embedding cache")
    if len(buf) < 16:
        raise CacheCorruptionError("truncated cache header", len(buf))
    version, dim, count = struct.unpack_from("<III", buf, 4)
    if version != CACHE_VERSION:
        raise CacheFormatError(f"unsupported cache version {version}")
    if dim != EMBED_DIM:
        raise CacheFormatError(f"cache dim {dim} != required {EMBED_DIM}")
    offset = 16
    records: list[EmbeddingRecord] = []
    for _ in range(count):
        raw, offset = _take(buf, offset, 2, "id length")
        (id_len,) = struct.unpack("<H", raw)
        raw, offset = _take(buf, offset, id_len, "id")
        rec_id = raw.decode("utf-8")
        raw, offset = _take(buf, offset, 1, "label")
        label_byte = raw[0]
        if label_byte not in (0, 1):
            raise CacheCorruptionError(f"invalid label byte {label_byte}", offset - 1)
        raw, offset = _take(buf, offset, 2, "category length")
        (cat_len,) = struct.unpack("<H", raw)
        raw, offset = _take(buf, offset, cat_len, "category")
        category = raw.decode("utf-8")
        raw, offset = _take(buf, offset, 4 * EMBED_DIM, "vector")
        vector = np.frombuffer(raw, dtype="<f4").copy()
        records.append(
            EmbeddingRecord(id=rec_id, label=Label(label_byte), vector=vector,
                            category=category)
        )
    if offset != len(buf):
        raise CacheCorruptionError("trailing bytes after last record", offset)
    return records


def cache_digest(records: list[EmbeddingRecord]) -> str:
    """Stable SHA-256 over ids, labels, categories, and vector bytes."""
    h = hashlib.sha256()
    for rec in records:
        h.update(rec.id.encode("utf-8"))
        h.update(bytes([rec.label.value]))
        h.update(rec.category.encode("utf-8"))
        h.update(np.ascontiguousarray(rec.vector, dtype="<f4").tobytes())
    return h.hexdigest()


# --- splits --------------------------------------------------------------------


@dataclass
class SplitSpec:
    seed: int
    adaptation_fraction: float
    stratified: bool = True


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def few_shot_split(
    records: list[EmbeddingRecord], spec: SplitSpec
) -> tuple[list[EmbeddingRecord], list[EmbeddingRecord]]:
    """Disjoint, exhaustive (adaptation, test) partition.

    Membership depends on sorted ids and the seed only, never on input order;
    stratified mode draws round(fraction * N_class) from each label class.
    Both returned lists are sorted by id.
    """
    if not 0.0 < spec.adaptation_fraction < 1.0:
        raise SplitError(
            f"adaptation fraction must be in (0,1), got {spec.adaptation_fraction}"
        )
    by_id = {}
    for rec in records:
        if rec.id in by_id:
            raise SplitError(f"duplicate record id {rec.id!r}")
        by_id[rec.id] = rec
    rng = np.random.default_rng(spec.seed)
    adapt_ids: set[str] = set()
    if spec.stratified:
        classes = []
        for label in (Label.REAL, Label.FAKE):
            class_ids = sorted(r.id for r in records if r.label is label)
            if len(class_ids) < 2:
                raise SplitError(
                    f"class {label} has {len(class_ids)} records; "
                    f"need at least 2 to stratify"
                )
            classes.append((label, class_ids))
        # Total is round(fraction * N); each class gets floor or ceil of its
        # quota, extras going to the largest fractional remainders (REAL wins
        # ties), so per-class counts stay within 1 of fraction * N_class.
        quotas = [spec.adaptation_fraction * len(ids) for _, ids in classes]
        takes = [int(np.floor(q)) for q in quotas]
        extras = _round_half_up(spec.adaptation_fraction * len(records)) - sum(takes)
        order_by_remainder = sorted(
            range(len(classes)), key=lambda i: (-(quotas[i] - takes[i]), i)
        )
        for i in order_by_remainder[:max(extras, 0)]:
            takes[i] += 1
        for (label, class_ids), take in zip(classes, takes):
            order = rng.permutation(len(class_ids))
            adapt_ids.update(class_ids[i] for i in order[:take])
    else:
        all_ids = sorted(by_id)
        take = _round_half_up(spec.adaptation_fraction * len(all_ids))
        order = rng.permutation(len(all_ids))
        adapt_ids.update(all_ids[i] for i in order[:take])
    adaptation = [by_id[i] for i in sorted(adapt_ids)]
    test = [by_id[i] for i in sorted(set(by_id) - adapt_ids)]
    return adaptation, test
