"""Bit-exact persistence of encoder outputs.

Binary layout (all integers little-endian):

    magic   8 bytes  b"VELAEMB1"
    version u16      currently 1
    flags   u16      bit0 = vectors are unit-normalized
    r2c_dim u32
    i2c_dim u32
    count   u32
    records:
        key_len u16, key bytes (UTF-8 sample id)
        record_type u8   0 = R2C, 1 = ImageVec, 2 = TextVec
        R2C: perspective u8 (0=desc, 1=rel, 2=flu, 255=shared),
             seq_len u32, prompt_digest u64,
             mean f32 x r2c_dim, last f32 x r2c_dim
        vec: f32 x i2c_dim

Payloads are float32; reading and writing never re-encode them, so a
round-trip preserves the exact bit patterns.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

from .errors import (
    DimensionMismatchError,
    DuplicateKeyError,
    MissingRecordError,
    StoreFormatError,
    ValidationError,
)
from .perspective import PERSPECTIVE_WIRE_CODES, WIRE_CODE_PERSPECTIVES

MAGIC = b"VELAEMB1"
VERSION = 1
FLAG_NORMALIZED = 0x0001

_HEADER = struct.Struct("<8sHHIII")
UNIT_NORM_TOL = 1e-3


class VecKind(enum.Enum):
    IMAGE = 1
    CANDIDATE_TEXT = 2


@dataclass(frozen=True)
class R2CRecord:
    """Pooled hidden-state pair for one sample and perspective."""

    sample_id: str
    perspective: str
    mean_vec: np.ndarray
    last_vec: np.ndarray
    seq_len: int
    prompt_digest: int

    def __post_init__(self) -> None:
        mean = _check_f32(self.mean_vec, f"{self.sample_id} mean_vec")
        last = _check_f32(self.last_vec, f"{self.sample_id} last_vec")
        object.__setattr__(self, "mean_vec", mean)
        object.__setattr__(self, "last_vec", last)
        if len(mean) != len(last):
            raise DimensionMismatchError(
                f"record {self.sample_id}: mean/last dims differ"
            )
        if len(mean) == 0:
            raise ValidationError(f"record {self.sample_id}: zero-dim vectors")
        if self.seq_len < 1:
            raise ValidationError(f"record {self.sample_id}: seq_len must be >= 1")
        if self.perspective not in PERSPECTIVE_WIRE_CODES:
            raise ValidationError(
                f"record {self.sample_id}: bad perspective {self.perspective!r}"
            )
        if not 0 <= self.prompt_digest < 2**64:
            raise ValidationError(
                f"record {self.sample_id}: digest outside u64 range"
            )

    @property
    def dim(self) -> int:
        return len(self.mean_vec)


@dataclass(frozen=True)
class VecRecord:
    """Single embedding vector (image or candidate text)."""

    sample_id: str
    kind: VecKind
    vec: np.ndarray
    normalized: bool = False

    def __post_init__(self) -> None:
        vec = _check_f32(self.vec, f"{self.sample_id} vec")
        object.__setattr__(self, "vec", vec)
        if len(vec) == 0:
            raise ValidationError(f"record {self.sample_id}: zero-dim vector")
        if self.normalized:
            norm = float(np.linalg.norm(vec.astype(np.float64)))
            if abs(norm - 1.0) >= UNIT_NORM_TOL:
                raise ValidationError(
                    f"record {self.sample_id}: marked normalized but "
                    f"|norm - 1| = {abs(norm - 1.0):.3g}"
                )

    @property
    def dim(self) -> int:
        return len(self.vec)


Record = Union[R2CRecord, VecRecord]


def _check_f32(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float32)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be a vector")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


@dataclass
class EmbeddingFile:
    """Validated in-memory index over a store file's records."""

    r2c_dim: int
    i2c_dim: int
    normalized: bool
    r2c: dict[tuple[str, str], R2CRecord] = field(default_factory=dict)
    vecs: dict[tuple[str, VecKind], VecRecord] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.r2c) + len(self.vecs)

    def get_r2c(self, sample_id: str, perspective: str) -> R2CRecord:
        try:
            return self.r2c[(sample_id, perspective)]
        except KeyError:
            raise MissingRecordError(
                f"no language-branch record for ({sample_id}, {perspective})"
            ) from None

    def get_vec(self, sample_id: str, kind: VecKind) -> VecRecord:
        try:
            return self.vecs[(sample_id, kind)]
        except KeyError:
            raise MissingRecordError(
                f"no {kind.name.lower()} vector for {sample_id}"
            ) from None

    def merge(self, other: "EmbeddingFile") -> None:
        """Fold another file's records into this index (for multi-file runs)."""
        for key, rec in other.r2c.items():
            if key in self.r2c:
                raise DuplicateKeyError(f"duplicate record key {key}")
            if self.r2c and rec.dim != self.r2c_dim:
                raise DimensionMismatchError(
                    f"record {key}: dim {rec.dim} != {self.r2c_dim}"
                )
            self.r2c_dim = rec.dim
            self.r2c[key] = rec
        for key, rec in other.vecs.items():
            if key in self.vecs:
                raise DuplicateKeyError(f"duplicate record key {key}")
            if self.vecs and rec.dim != self.i2c_dim:
                raise DimensionMismatchError(
                    f"record {key}: dim {rec.dim} != {self.i2c_dim}"
                )
            self.i2c_dim = rec.dim
            self.vecs[key] = rec


def _index_records(records: Iterable[Record]) -> EmbeddingFile:
    out = EmbeddingFile(r2c_dim=0, i2c_dim=0, normalized=False)
    norm_flags: set[bool] = set()
    for rec in records:
        if isinstance(rec, R2CRecord):
            key = (rec.sample_id, rec.perspective)
            if key in out.r2c:
                raise DuplicateKeyError(f"duplicate record key {key}")
            if out.r2c and rec.dim != out.r2c_dim:
                raise DimensionMismatchError(
                    f"record {key}: dim {rec.dim} != {out.r2c_dim}"
                )
            out.r2c_dim = rec.dim
            out.r2c[key] = rec
        elif isinstance(rec, VecRecord):
            vkey = (rec.sample_id, rec.kind)
            if vkey in out.vecs:
                raise DuplicateKeyError(f"duplicate record key {vkey}")
            if out.vecs and rec.dim != out.i2c_dim:
                raise DimensionMismatchError(
                    f"record {vkey}: dim {rec.dim} != {out.i2c_dim}"
                )
            out.i2c_dim = rec.dim
            out.vecs[vkey] = rec
            norm_flags.add(rec.normalized)
        else:
            raise ValidationError(f"unsupported record type {type(rec)!r}")
    if len(norm_flags) > 1:
        raise ValidationError(
            "mixed normalized flags across vector records in one file"
        )
    out.normalized = norm_flags.pop() if norm_flags else False
    return out


def write_embeddings(path: str | Path, records: Iterable[Record]) -> None:
    """Write records to the binary store format (empty input is valid)."""
    indexed = _index_records(records)
    flags = FLAG_NORMALIZED if indexed.normalized else 0
    count = len(indexed)

    with Path(path).open("wb") as f:
        f.write(
            _HEADER.pack(
                MAGIC, VERSION, flags, indexed.r2c_dim, indexed.i2c_dim, count
            )
        )
        for (sample_id, perspective), rec in indexed.r2c.items():
            key = sample_id.encode("utf-8")
            f.write(struct.pack("<H", len(key)))
            f.write(key)
            f.write(struct.pack("<BB", 0, PERSPECTIVE_WIRE_CODES[perspective]))
            f.write(struct.pack("<IQ", rec.seq_len, rec.prompt_digest))
            f.write(rec.mean_vec.astype("<f4", copy=False).tobytes())
            f.write(rec.last_vec.astype("<f4", copy=False).tobytes())
        for (sample_id, kind), rec in indexed.vecs.items():
            key = sample_id.encode("utf-8")
            f.write(struct.pack("<H", len(key)))
            f.write(key)
            f.write(struct.pack("<B", kind.value))
            f.write(rec.vec.astype("<f4", copy=False).tobytes())


class _Reader:
    """Sequential reader that reports the byte offset of any truncation."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise StoreFormatError(
                f"truncated file: needed {n} bytes for {what} at offset "
                f"{self.pos}, file has {len(self.data)}"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def done(self) -> bool:
        return self.pos == len(self.data)


def _read_f32(reader: _Reader, dim: int, what: str) -> np.ndarray:
    raw = reader.take(4 * dim, what)
    vec = np.frombuffer(raw, dtype="<f4")
    if not np.all(np.isfinite(vec)):
        raise StoreFormatError(f"non-finite float in {what}")
    return vec


def read_embeddings(path: str | Path) -> EmbeddingFile:
    """Read and fully validate a store file."""
    data = Path(path).read_bytes()
    reader = _Reader(data)
    header = reader.take(_HEADER.size, "header")
    magic, version, flags, r2c_dim, i2c_dim, count = _HEADER.unpack(header)
    if magic != MAGIC:
        raise StoreFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise StoreFormatError(f"unsupported version {version}")
    normalized = bool(flags & FLAG_NORMALIZED)

    out = EmbeddingFile(r2c_dim=r2c_dim, i2c_dim=i2c_dim, normalized=normalized)
    for i in range(count):
        what = f"record {i}"
        (key_len,) = struct.unpack("<H", reader.take(2, f"{what} key length"))
        key = reader.take(key_len, f"{what} key").decode("utf-8")
        (rtype,) = struct.unpack("<B", reader.take(1, f"{what} type"))
        if rtype == 0:
            (pcode,) = struct.unpack("<B", reader.take(1, f"{what} perspective"))
            if pcode not in WIRE_CODE_PERSPECTIVES:
                raise StoreFormatError(
                    f"{what} ({key}): unknown perspective code {pcode}"
                )
            seq_len, digest = struct.unpack(
                "<IQ", reader.take(12, f"{what} metadata")
            )
            try:
                mean = _read_f32(reader, r2c_dim, f"{what} ({key}) mean")
                last = _read_f32(reader, r2c_dim, f"{what} ({key}) last")
                rec = R2CRecord(
                    sample_id=key,
                    perspective=WIRE_CODE_PERSPECTIVES[pcode],
                    mean_vec=mean,
                    last_vec=last,
                    seq_len=seq_len,
                    prompt_digest=digest,
                )
            except ValidationError as e:
                raise StoreFormatError(str(e)) from None
            rkey = (rec.sample_id, rec.perspective)
            if rkey in out.r2c:
                raise DuplicateKeyError(f"duplicate record key {rkey}")
            out.r2c[rkey] = rec
        elif rtype in (1, 2):
            kind = VecKind(rtype)
            try:
                vec = _read_f32(reader, i2c_dim, f"{what} ({key}) vector")
                rec = VecRecord(
                    sample_id=key, kind=kind, vec=vec, normalized=normalized
                )
            except ValidationError as e:
                raise StoreFormatError(str(e)) from None
            vkey = (rec.sample_id, rec.kind)
            if vkey in out.vecs:
                raise DuplicateKeyError(f"duplicate record key {vkey}")
            out.vecs[vkey] = rec
        else:
            raise StoreFormatError(f"{what} ({key}): unknown record type {rtype}")

    if not reader.done():
        raise StoreFormatError(
            f"{len(data) - reader.pos} trailing bytes after the last record"
        )
    return out


def load_stores(paths: Iterable[str | Path]) -> EmbeddingFile:
    """Read several store files into one index (dims must agree per kind)."""
    merged: Optional[EmbeddingFile] = None
    for p in paths:
        loaded = read_embeddings(p)
        if merged is None:
            merged = loaded
        else:
            if merged.vecs and loaded.vecs and merged.normalized != loaded.normalized:
                raise ValidationError(
                    "cannot merge stores with different normalized flags"
                )
            merged.normalized = merged.normalized or loaded.normalized
            merged.merge(loaded)
    if merged is None:
        raise ValidationError("no embedding files given")
    return merged
