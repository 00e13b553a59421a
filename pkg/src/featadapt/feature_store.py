"""Dataset model and the FEATSET binary feature-file format.

One file holds one (domain, role) pair of pooled per-layer feature
vectors. Layout (little-endian):

    bytes 0-3    magic "FSET"
    bytes 4-5    version u16 = 1
    bytes 6-7    flags u16 (bit 0: labels present)
    bytes 8-11   n_records u32
    bytes 12-15  n_layers u32
    bytes 16-19  dim u32
    bytes 20-23  n_classes u32
    bytes 24-63  zero padding (reserved)
    payload      n_records * n_layers * dim float32, record-major
    labels       n_records int32 (only if flag bit 0 set; -1 = absent)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"FSET"
VERSION = 1
HEADER_SIZE = 64
ROLES = ("source_train", "source_valid", "target_unlabeled", "target_test")
_LABELED_ROLES = ("source_train", "source_valid", "target_test")


class FeatureStoreError(Exception):
    """Base class for dataset/format failures."""


class BadMagicError(FeatureStoreError):
    pass


class UnsupportedVersionError(FeatureStoreError):
    pass


class TruncatedPayloadError(FeatureStoreError):
    pass


class NonFiniteFeatureError(FeatureStoreError):
    def __init__(self, record_id: int):
        super().__init__(f"non-finite feature value in record {record_id}")
        self.record_id = record_id


class InvalidDatasetError(FeatureStoreError):
    pass


@dataclass(frozen=True)
class FeatureRecord:
    """One example: per-layer pooled feature vectors plus an optional label."""

    id: int
    layers: np.ndarray  # [n_layers, dim], float32
    label: int | None = None
    orig_id: int | None = None  # provenance after subset()

    def __post_init__(self):
        object.__setattr__(
            self, "layers", np.ascontiguousarray(self.layers, dtype=np.float32)
        )
        if self.layers.ndim != 2:
            raise InvalidDatasetError("record layers must be [n_layers, dim]")


@dataclass(frozen=True)
class Dataset:
    """Immutable ordered collection of FeatureRecords."""

    records: tuple[FeatureRecord, ...]
    n_classes: int
    domain_tag: str
    role: str

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if self.role not in ROLES:
            raise InvalidDatasetError(f"unknown role {self.role!r}")
        if self.n_classes < 1:
            raise InvalidDatasetError("n_classes must be >= 1")
        shapes = {r.layers.shape for r in self.records}
        if len(shapes) > 1:
            raise InvalidDatasetError(f"inconsistent layer shapes: {shapes}")
        for i, r in enumerate(self.records):
            if r.id != i:
                raise InvalidDatasetError("record ids must be 0..len-1 in order")
            if not np.all(np.isfinite(r.layers)):
                raise NonFiniteFeatureError(r.id)
            if r.label is not None and not (0 <= r.label < self.n_classes):
                raise InvalidDatasetError(
                    f"record {r.id} label {r.label} out of range"
                )
            if self.role in _LABELED_ROLES and r.label is None:
                raise InvalidDatasetError(
                    f"role {self.role} requires labels (record {r.id})"
                )

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n_layers(self) -> int:
        return self.records[0].layers.shape[0] if self.records else 0

    @property
    def dim(self) -> int:
        return self.records[0].layers.shape[1] if self.records else 0

    def features(self) -> np.ndarray:
        """Stack all records into [n_records, n_layers, dim] float64."""
        if not self.records:
            return np.zeros((0, self.n_layers, self.dim))
        return np.stack([r.layers for r in self.records]).astype(np.float64)

    def labels(self) -> np.ndarray:
        return np.array(
            [-1 if r.label is None else r.label for r in self.records],
            dtype=np.int32,
        )


def make_dataset(features: np.ndarray, labels, n_classes: int,
                 domain_tag: str, role: str) -> Dataset:
    """Build a Dataset from a [n, n_layers, dim] array and optional labels."""
    records = []
    for i in range(features.shape[0]):
        lbl = None
        if labels is not None:
            v = int(labels[i])
            lbl = None if v < 0 else v
        records.append(FeatureRecord(id=i, layers=features[i], label=lbl))
    return Dataset(tuple(records), n_classes, domain_tag, role)


def save_dataset(dataset: Dataset, path) -> None:
    """Write `dataset` in FEATSET format; byte-identical for equal inputs."""
    n, nl, d = len(dataset), dataset.n_layers, dataset.dim
    has_labels = any(r.label is not None for r in dataset.records)
    header = struct.pack(
        "<4sHHIIII", MAGIC, VERSION, 1 if has_labels else 0,
        n, nl, d, dataset.n_classes,
    )
    header += b"\x00" * (HEADER_SIZE - len(header))
    payload = b"".join(
        np.ascontiguousarray(r.layers, dtype="<f4").tobytes()
        for r in dataset.records
    )
    blob = header + payload
    if has_labels:
        blob += dataset.labels().astype("<i4").tobytes()
    Path(path).write_bytes(blob)


def load_dataset(path, domain_tag: str = "", role: str = "target_unlabeled") -> Dataset:
    """Parse a FEATSET file; rejects bad magic, versions, truncation, NaN/Inf."""
    raw = Path(path).read_bytes()
    if len(raw) < HEADER_SIZE:
        raise TruncatedPayloadError(f"file shorter than header: {path}")
    magic, version, flags, n, nl, d, n_classes = struct.unpack_from(
        "<4sHHIIII", raw, 0
    )
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r} in {path}")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    has_labels = bool(flags & 1)
    payload_bytes = n * nl * d * 4
    expected = HEADER_SIZE + payload_bytes + (n * 4 if has_labels else 0)
    if len(raw) != expected:
        raise TruncatedPayloadError(
            f"expected {expected} bytes, found {len(raw)}"
        )
    feats = np.frombuffer(
        raw, dtype="<f4", count=n * nl * d, offset=HEADER_SIZE
    ).reshape(n, nl, d)
    bad = ~np.isfinite(feats).reshape(n, -1).all(axis=1)
    if bad.any():
        raise NonFiniteFeatureError(int(np.argmax(bad)))
    labels = None
    if has_labels:
        labels = np.frombuffer(
            raw, dtype="<i4", count=n, offset=HEADER_SIZE + payload_bytes
        )
    return make_dataset(feats, labels, n_classes, domain_tag, role)


def subset(dataset: Dataset, ids, role: str | None = None) -> Dataset:
    """New Dataset from selected record ids, renumbered 0..k-1.

    The original id is retained in each record's `orig_id`.
    """
    ids = list(ids)
    if len(set(ids)) != len(ids):
        raise InvalidDatasetError("duplicate ids in subset")
    records = []
    for new_id, old_id in enumerate(ids):
        if not (0 <= old_id < len(dataset)):
            raise InvalidDatasetError(f"subset id {old_id} out of range")
        src = dataset.records[old_id]
        records.append(
            FeatureRecord(id=new_id, layers=src.layers, label=src.label,
                          orig_id=old_id if src.orig_id is None else src.orig_id)
        )
    return Dataset(tuple(records), dataset.n_classes, dataset.domain_tag,
                   role or dataset.role)


@dataclass
class Manifest:
    """Binds FEATSET files into an experiment: role -> path, plus domain tags."""

    files: dict[str, str]
    domains: dict[str, str] = field(default_factory=dict)

    def save(self, path):
        Path(path).write_text(
            json.dumps({"files": self.files, "domains": self.domains},
                       indent=2, sort_keys=True)
        )

    @classmethod
    def load(cls, path) -> "Manifest":
        doc = json.loads(Path(path).read_text())
        return cls(files=doc["files"], domains=doc.get("domains", {}))

    def load_role(self, role: str, base: Path | None = None) -> Dataset:
        if role not in self.files:
            raise InvalidDatasetError(f"manifest missing role {role!r}")
        p = Path(self.files[role])
        if base is not None and not p.is_absolute():
            p = base / p
        return load_dataset(p, domain_tag=self.domains.get(role, ""), role=role)
