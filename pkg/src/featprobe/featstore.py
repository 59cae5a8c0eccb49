"""On-disk feature and manifest formats with integrity checks.

Feature files ("FPK1") are a fixed little-endian binary layout:

    bytes  0..3   magic b"FPK1"
    bytes  4..7   u32 format version (currently 1)
    bytes  8..15  u64 n_rows
    bytes 16..19  u32 dim
    bytes 20..23  u32 dtype code (0 = float32)
    ...           n_rows * dim raw little-endian float32 values, row-major
    last 32 bytes sha256 digest of the payload

Manifests are CSV files with the header
``row_index,video_id,label,manipulation,source,split`` followed by one data
line per frame and two footer comment lines ``# seed=<u64>`` and
``# sha256=<64 hex>``. The hash covers the canonical data lines exactly as
written, so the file is self-verifying and human-diffable.
"""

from __future__ import annotations

import hashlib
import re
import struct
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    BadMagicError,
    DigestMismatchError,
    EmptySelectionError,
    HashMismatchError,
    LabelInconsistentError,
    SchemaError,
    SplitLeakError,
    TruncatedFileError,
    VersionUnsupportedError,
)
from .validation import as_feature_matrix

FEATURES_MAGIC = b"FPK1"
FEATURES_VERSION = 1
DTYPE_FLOAT32 = 0
_HEADER = struct.Struct("<4sIQII")
_DIGEST_BYTES = 32

MANIFEST_HEADER = "row_index,video_id,label,manipulation,source,split"

REAL = "REAL"
FAKE_FAMILIES = ("DF", "F2F", "FS", "NT")

SPLIT_TRAIN = "train"
SPLIT_VAL = "val"
SPLIT_TEST = "test"
SPLITS = (SPLIT_TRAIN, SPLIT_VAL, SPLIT_TEST)

# video ids, manipulation tags and source names are opaque tokens; the
# charset excludes separators so canonical CSV lines never need quoting
_TOKEN_RE = re.compile(r"[A-Za-z0-9][A-Za-z0-9._:-]*\Z")

_MAX_SEED = 2**64


def atomic_write_bytes(path: str | Path, blob: bytes) -> None:
    """Write-to-temp-then-rename so readers never observe partial files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd = tempfile.NamedTemporaryFile(
        mode="wb", dir=path.parent, prefix=path.name + ".", suffix=".tmp", delete=False
    )
    try:
        with fd:
            fd.write(blob)
        Path(fd.name).replace(path)
    except BaseException:
        Path(fd.name).unlink(missing_ok=True)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# --------------------------------------------------------------------------
# feature files
# --------------------------------------------------------------------------

def write_features(matrix, path: str | Path) -> None:
    """Persist a feature matrix as an FPK1 file.

    Refuses to write non-finite values; the payload digest makes any later
    single-byte corruption detectable on read.
    """
    m = as_feature_matrix(matrix)
    n_rows, dim = m.shape
    payload = np.ascontiguousarray(m, dtype="<f4").tobytes()
    header = _HEADER.pack(FEATURES_MAGIC, FEATURES_VERSION, n_rows, dim, DTYPE_FLOAT32)
    digest = hashlib.sha256(payload).digest()
    atomic_write_bytes(path, header + payload + digest)


def _parse_feature_blob(blob: bytes, path: str | Path) -> tuple[int, int, bytes, bytes]:
    if len(blob) < _HEADER.size:
        raise TruncatedFileError(f"{path}: shorter than the 24-byte header")
    magic, version, n_rows, dim, dtype = _HEADER.unpack_from(blob)
    if magic != FEATURES_MAGIC:
        raise BadMagicError(f"{path}: magic {magic!r}, expected {FEATURES_MAGIC!r}")
    if version != FEATURES_VERSION:
        raise VersionUnsupportedError(f"{path}: version {version} unsupported")
    if dtype != DTYPE_FLOAT32:
        raise VersionUnsupportedError(f"{path}: dtype code {dtype} unsupported")
    if dim < 1:
        raise SchemaError(f"{path}: header declares dim=0")
    expected = _HEADER.size + n_rows * dim * 4 + _DIGEST_BYTES
    if len(blob) < expected:
        raise TruncatedFileError(
            f"{path}: {len(blob)} bytes, header implies {expected}"
        )
    if len(blob) > expected:
        raise TruncatedFileError(
            f"{path}: {len(blob) - expected} unexpected trailing bytes"
        )
    payload = blob[_HEADER.size : _HEADER.size + n_rows * dim * 4]
    stored = blob[-_DIGEST_BYTES:]
    return n_rows, dim, payload, stored


def read_features(path: str | Path) -> np.ndarray:
    """Load and verify an FPK1 file; returns a read-only float32 matrix."""
    blob = Path(path).read_bytes()
    n_rows, dim, payload, stored = _parse_feature_blob(blob, path)
    if hashlib.sha256(payload).digest() != stored:
        raise DigestMismatchError(f"{path}: payload digest mismatch")
    arr = np.frombuffer(payload, dtype="<f4").reshape(n_rows, dim)
    return arr  # backed by immutable bytes: safe to share across readers


def features_digest(path: str | Path) -> str:
    """Verify an FPK1 file and return its payload digest as hex."""
    blob = Path(path).read_bytes()
    _, _, payload, stored = _parse_feature_blob(blob, path)
    digest = hashlib.sha256(payload).digest()
    if digest != stored:
        raise DigestMismatchError(f"{path}: payload digest mismatch")
    return digest.hex()


# --------------------------------------------------------------------------
# manifests
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SampleRecord:
    """One frame: its feature row plus video-level annotations."""

    row_index: int
    video_id: str
    label: int
    manipulation: str
    source: str
    split: str

    def line(self) -> str:
        return (
            f"{self.row_index},{self.video_id},{self.label},"
            f"{self.manipulation},{self.source},{self.split}"
        )


def _check_token(value: str, field: str) -> None:
    if not _TOKEN_RE.match(value):
        raise SchemaError(f"{field} {value!r} is not a valid token")


def _validate_records(records: Sequence[SampleRecord]) -> None:
    seen_rows: set[int] = set()
    video_attrs: dict[str, tuple[int, str, str, str]] = {}
    for rec in records:
        if not isinstance(rec.row_index, int) or rec.row_index < 0:
            raise SchemaError(f"row_index {rec.row_index!r} must be a non-negative int")
        if rec.row_index in seen_rows:
            raise SchemaError(f"row_index {rec.row_index} duplicated")
        seen_rows.add(rec.row_index)
        if rec.label not in (0, 1):
            raise SchemaError(f"label {rec.label!r} must be 0 or 1")
        if rec.split not in SPLITS:
            raise SchemaError(f"split {rec.split!r} must be one of {SPLITS}")
        _check_token(rec.video_id, "video_id")
        _check_token(rec.manipulation, "manipulation")
        _check_token(rec.source, "source")
        if (rec.label == 0) != (rec.manipulation == REAL):
            raise LabelInconsistentError(
                f"video {rec.video_id}: label={rec.label} with "
                f"manipulation={rec.manipulation}"
            )
        attrs = (rec.label, rec.manipulation, rec.source, rec.split)
        prev = video_attrs.setdefault(rec.video_id, attrs)
        if prev != attrs:
            if prev[3] != rec.split:
                raise SplitLeakError(
                    f"video {rec.video_id} appears in splits {prev[3]!r} and {rec.split!r}"
                )
            raise LabelInconsistentError(
                f"video {rec.video_id} has inconsistent annotations: {prev} vs {attrs}"
            )


def _canonical_text(records: Sequence[SampleRecord]) -> str:
    return "".join(rec.line() + "\n" for rec in records)


def records_hash(records: Sequence[SampleRecord]) -> str:
    return hashlib.sha256(_canonical_text(records).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class SampleManifest:
    """Ordered frame records plus the experiment seed and a content hash."""

    records: tuple[SampleRecord, ...]
    seed: int
    content_hash: str

    @classmethod
    def from_records(cls, records: Iterable[SampleRecord], seed: int) -> "SampleManifest":
        recs = tuple(records)
        if not (0 <= int(seed) < _MAX_SEED):
            raise SchemaError(f"seed {seed!r} is not a u64")
        _validate_records(recs)
        return cls(records=recs, seed=int(seed), content_hash=records_hash(recs))

    def __len__(self) -> int:
        return len(self.records)

    def labels(self) -> np.ndarray:
        return np.array([rec.label for rec in self.records], dtype=np.int64)

    def video_ids(self) -> list[str]:
        return [rec.video_id for rec in self.records]

    def rows_where(self, predicate: Callable[[SampleRecord], bool]) -> np.ndarray:
        return np.array(
            [rec.row_index for rec in self.records if predicate(rec)], dtype=np.int64
        )

    def manipulations(self) -> set[str]:
        return {rec.manipulation for rec in self.records}


def write_manifest(manifest: SampleManifest, path: str | Path) -> None:
    body = MANIFEST_HEADER + "\n" + _canonical_text(manifest.records)
    footer = f"# seed={manifest.seed}\n# sha256={manifest.content_hash}\n"
    atomic_write_text(path, body + footer)


def load_manifest(path: str | Path) -> SampleManifest:
    """Parse and fully validate a manifest file.

    Checks, in order: CSV schema, footer hash against the canonical data
    lines, and the manifest invariants (unique rows, label/manipulation
    consistency, videos confined to one split).
    """
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != MANIFEST_HEADER:
        raise SchemaError(f"{path}: first line must be '{MANIFEST_HEADER}'")
    records: list[SampleRecord] = []
    seed: int | None = None
    stored_hash: str | None = None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("seed="):
                if seed is not None:
                    raise SchemaError(f"{path}:{lineno}: duplicate seed footer")
                try:
                    seed = int(body[len("seed="):])
                except ValueError as exc:
                    raise SchemaError(f"{path}:{lineno}: bad seed value") from exc
            elif body.startswith("sha256="):
                if stored_hash is not None:
                    raise SchemaError(f"{path}:{lineno}: duplicate sha256 footer")
                stored_hash = body[len("sha256="):].strip().lower()
                if not re.fullmatch(r"[0-9a-f]{64}", stored_hash):
                    raise SchemaError(f"{path}:{lineno}: sha256 footer is not 64 hex chars")
            else:
                raise SchemaError(f"{path}:{lineno}: unrecognized comment line")
            continue
        parts = line.split(",")
        if len(parts) != 6:
            raise SchemaError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
        raw_row, video_id, raw_label, manipulation, source, split = parts
        try:
            row_index = int(raw_row)
            label = int(raw_label)
        except ValueError as exc:
            raise SchemaError(f"{path}:{lineno}: non-integer row_index/label") from exc
        records.append(
            SampleRecord(
                row_index=row_index,
                video_id=video_id,
                label=label,
                manipulation=manipulation,
                source=source,
                split=split,
            )
        )
    if seed is None or stored_hash is None:
        raise SchemaError(f"{path}: missing '# seed=' or '# sha256=' footer")
    actual = records_hash(records)
    if actual != stored_hash:
        raise HashMismatchError(
            f"{path}: content hash {actual} != stored {stored_hash}"
        )
    return SampleManifest.from_records(records, seed)


# --------------------------------------------------------------------------
# pairing and selection
# --------------------------------------------------------------------------

def check_paired(matrix: np.ndarray, manifest: SampleManifest) -> None:
    """Require that row indices form a permutation of the matrix rows."""
    n_rows = matrix.shape[0]
    if len(manifest) != n_rows:
        raise ValueError(
            f"manifest has {len(manifest)} records, matrix has {n_rows} rows"
        )
    rows = sorted(rec.row_index for rec in manifest.records)
    if rows != list(range(n_rows)):
        raise ValueError("manifest row indices do not cover the matrix rows")


def select_rows(
    matrix: np.ndarray,
    manifest: SampleManifest,
    predicate: Callable[[SampleRecord], bool],
) -> tuple[np.ndarray, SampleManifest]:
    """Slice a paired (matrix, manifest) down to records matching predicate.

    Order is preserved, rows are renumbered 0..k-1 and the sub-manifest's
    content hash is re-derived.
    """
    check_paired(matrix, manifest)
    kept = [rec for rec in manifest.records if predicate(rec)]
    if not kept:
        raise EmptySelectionError("predicate matched no records")
    idx = np.array([rec.row_index for rec in kept], dtype=np.int64)
    sub = matrix[idx]
    renumbered = [replace(rec, row_index=i) for i, rec in enumerate(kept)]
    return sub, SampleManifest.from_records(renumbered, manifest.seed)
