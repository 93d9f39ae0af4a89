"""Writer/reader for the VELAEMB1 embedding container.

Layout (little-endian): magic "VELAEMB1", version u16, flags u16 (bit0 =
normalized vectors), r2c_dim u32, i2c_dim u32, record count u32, then
records. Each record: key_len u16 + UTF-8 key, record type u8 (0 = R2C,
1 = image vector, 2 = text vector). R2C records carry perspective u8
(0=desc, 1=rel, 2=flu, 255=shared), seq_len u32, prompt digest u64 and
two float32 vectors (mean, last); vector records carry one float32
vector of i2c_dim.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExtractorError

MAGIC = b"VELAEMB1"
VERSION = 1
FLAG_NORMALIZED = 0x0001
_HEADER = struct.Struct("<8sHHIII")

PERSPECTIVE_CODES = {"desc": 0, "rel": 1, "flu": 2, "shared": 255}
CODE_PERSPECTIVES = {v: k for k, v in PERSPECTIVE_CODES.items()}

KIND_IMAGE = 1
KIND_TEXT = 2


@dataclass(frozen=True)
class R2CRecord:
    sample_id: str
    perspective: str
    mean: np.ndarray
    last: np.ndarray
    seq_len: int
    digest: int


@dataclass(frozen=True)
class VectorRecord:
    sample_id: str
    kind: int  # KIND_IMAGE or KIND_TEXT
    vec: np.ndarray


def _f32(arr, what: str) -> np.ndarray:
    out = np.asarray(arr, dtype=np.float32)
    if out.ndim != 1:
        raise ExtractorError(f"{what}: expected a vector")
    if not np.all(np.isfinite(out)):
        raise ExtractorError(f"{what}: non-finite values")
    return out


def write_embedding_file(
    path: str | Path,
    r2c_records: list[R2CRecord],
    vector_records: list[VectorRecord],
    normalized: bool,
    expect_r2c_dim: int | None = None,
    expect_i2c_dim: int | None = None,
) -> None:
    """Validates dims at write time against the configured sizes."""
    r2c_dim = len(r2c_records[0].mean) if r2c_records else (expect_r2c_dim or 0)
    i2c_dim = len(vector_records[0].vec) if vector_records else (expect_i2c_dim or 0)
    if expect_r2c_dim is not None and r2c_records and r2c_dim != expect_r2c_dim:
        raise ExtractorError(
            f"emitted r2c dim {r2c_dim} != configured {expect_r2c_dim}"
        )
    if expect_i2c_dim is not None and vector_records and i2c_dim != expect_i2c_dim:
        raise ExtractorError(
            f"emitted i2c dim {i2c_dim} != configured {expect_i2c_dim}"
        )

    seen: set[tuple] = set()
    flags = FLAG_NORMALIZED if normalized else 0
    count = len(r2c_records) + len(vector_records)
    with Path(path).open("wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, flags, r2c_dim, i2c_dim, count))
        for rec in r2c_records:
            key = (rec.sample_id, rec.perspective)
            if key in seen:
                raise ExtractorError(f"duplicate record {key}")
            seen.add(key)
            mean = _f32(rec.mean, f"{key} mean")
            last = _f32(rec.last, f"{key} last")
            if len(mean) != r2c_dim or len(last) != r2c_dim:
                raise ExtractorError(f"{key}: inconsistent r2c dims")
            encoded = rec.sample_id.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(
                struct.pack(
                    "<BBIQ",
                    0,
                    PERSPECTIVE_CODES[rec.perspective],
                    rec.seq_len,
                    rec.digest,
                )
            )
            f.write(mean.astype("<f4", copy=False).tobytes())
            f.write(last.astype("<f4", copy=False).tobytes())
        for rec in vector_records:
            key = (rec.sample_id, rec.kind)
            if key in seen:
                raise ExtractorError(f"duplicate record {key}")
            seen.add(key)
            vec = _f32(rec.vec, f"{key} vec")
            if len(vec) != i2c_dim:
                raise ExtractorError(f"{key}: inconsistent i2c dims")
            if normalized and abs(float(np.linalg.norm(vec)) - 1.0) >= 1e-3:
                raise ExtractorError(f"{key}: vector not unit-normalized")
            encoded = rec.sample_id.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", rec.kind))
            f.write(vec.astype("<f4", copy=False).tobytes())


def read_embedding_file(
    path: str | Path,
) -> tuple[dict, list[R2CRecord], list[VectorRecord]]:
    """Full validation pass; returns (header, r2c records, vector records)."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ExtractorError("truncated header")
    magic, version, flags, r2c_dim, i2c_dim, count = _HEADER.unpack(
        data[: _HEADER.size]
    )
    if magic != MAGIC:
        raise ExtractorError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ExtractorError(f"unsupported version {version}")
    pos = _HEADER.size

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise ExtractorError(f"truncated at byte {pos} reading {what}")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    r2c_records: list[R2CRecord] = []
    vector_records: list[VectorRecord] = []
    for i in range(count):
        (key_len,) = struct.unpack("<H", take(2, "key length"))
        key = take(key_len, "key").decode("utf-8")
        (rtype,) = struct.unpack("<B", take(1, "record type"))
        if rtype == 0:
            pcode, seq_len, digest = struct.unpack("<BIQ", take(13, "r2c header"))
            if pcode not in CODE_PERSPECTIVES:
                raise ExtractorError(f"record {i}: bad perspective {pcode}")
            mean = np.frombuffer(take(4 * r2c_dim, "mean"), dtype="<f4")
            last = np.frombuffer(take(4 * r2c_dim, "last"), dtype="<f4")
            r2c_records.append(
                R2CRecord(key, CODE_PERSPECTIVES[pcode], mean, last, seq_len, digest)
            )
        elif rtype in (KIND_IMAGE, KIND_TEXT):
            vec = np.frombuffer(take(4 * i2c_dim, "vector"), dtype="<f4")
            vector_records.append(VectorRecord(key, rtype, vec))
        else:
            raise ExtractorError(f"record {i}: unknown type {rtype}")
    if pos != len(data):
        raise ExtractorError(f"{len(data) - pos} trailing bytes")
    header = {
        "normalized": bool(flags & FLAG_NORMALIZED),
        "r2c_dim": r2c_dim,
        "i2c_dim": i2c_dim,
        "count": count,
    }
    return header, r2c_records, vector_records
