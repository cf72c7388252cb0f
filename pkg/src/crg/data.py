"""Bit-exact embedding stream I/O and the synthetic dataset generator.

Two little-endian binary block formats share one header convention
(8-byte magic, u32 version, u32 d, u32 K):

* sample block, magic ``CRGEMB1\\0``: repeated records of
  u64 sample id, i32 label (-1 = unknown), u32 n_views, then
  n_views * d float32 values (view 0 is the original image's feature);
* text block, magic ``CRGTXT1\\0``: K * d float32 values, row-major.

The manifest is a JSON document tying the blocks together. Readers stream
records in constant memory, re-normalize rows (float32 storage rounds the
unit norm) and track the largest deviation they had to absorb.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .core import normalize_rows
from .exceptions import FormatError, VersionError

SAMPLE_MAGIC = b"CRGEMB1\x00"
TEXT_MAGIC = b"CRGTXT1\x00"
FORMAT_VERSION = 1
MANIFEST_VERSION = 1

_HEADER = struct.Struct("<III")        # version, d, K
_RECORD_HEAD = struct.Struct("<QiI")   # sample id, label, n_views

# Stored rows may deviate from unit norm by float32 rounding (~1e-7) or by
# encoder numerics (up to 1e-3 for the extractor); beyond this they are
# treated as corrupt.
MAX_NORM_DEVIATION = 1e-2


@dataclass
class Manifest:
    """Run description: dimensions, class names, and block locations."""

    d: int
    K: int
    class_names: list[str]
    text_path: str
    samples_path: str
    version: int = MANIFEST_VERSION
    dataset_name: str | None = None
    note: str | None = None
    insertion_noise_rate: float = 0.0

    def validate(self) -> None:
        if self.version != MANIFEST_VERSION:
            raise VersionError(f"unsupported manifest version {self.version}")
        if self.d <= 0 or self.K <= 0:
            raise FormatError(f"manifest d={self.d}, K={self.K} must be positive")
        if len(self.class_names) != self.K:
            raise FormatError(
                f"manifest lists {len(self.class_names)} class names for K={self.K}"
            )
        if not 0.0 <= self.insertion_noise_rate <= 1.0:
            raise FormatError("insertion_noise_rate must be in [0, 1]")


@dataclass
class SampleRecord:
    """One test sample: its id, optional true label, and view features."""

    sample_id: int
    true_label: int | None
    views: np.ndarray  # (n_views, d) float64, unit rows after reading

    @property
    def n_views(self) -> int:
        return self.views.shape[0]


@dataclass
class SynthConfig:
    """Synthetic stream parameters.

    Class directions are uniform on the d-sphere; text features perturb them
    by ``text_jitter``; samples scatter around their class direction by
    ``class_spread`` and augmented views around the sample by ``view_jitter``.
    ``label_noise_rate`` does not corrupt ground truth: it is recorded in the
    manifest and tells the run harness to force wrong-class cache insertions
    at that rate.
    """

    K: int
    d: int
    samples: int
    label_noise_rate: float = 0.0
    class_spread: float = 0.3
    view_jitter: float = 0.1
    text_jitter: float = 0.1
    n_views: int = 8
    seed: int = 0

    def validate(self) -> None:
        if self.K < 2 or self.d < 2:
            raise FormatError("synthetic streams need K >= 2 and d >= 2")
        if self.samples < 0 or self.n_views < 1:
            raise FormatError("samples must be >= 0 and n_views >= 1")
        if not 0.0 <= self.label_noise_rate <= 1.0:
            raise FormatError("label_noise_rate must be in [0, 1]")
        if min(self.class_spread, self.view_jitter, self.text_jitter) < 0.0:
            raise FormatError("jitter scales must be non-negative")


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------


def write_manifest(manifest: Manifest, path: str | Path) -> None:
    manifest.validate()
    Path(path).write_text(json.dumps(asdict(manifest), indent=2) + "\n", encoding="utf-8")


def read_manifest(path: str | Path) -> Manifest:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise FormatError("manifest must be a JSON object")
    known = {f.name for f in Manifest.__dataclass_fields__.values()}
    unknown = set(payload) - known
    if unknown:
        raise FormatError(f"manifest has unknown fields: {sorted(unknown)}")
    missing = {"d", "K", "class_names", "text_path", "samples_path"} - set(payload)
    if missing:
        raise FormatError(f"manifest is missing fields: {sorted(missing)}")
    manifest = Manifest(**payload)
    manifest.validate()
    return manifest


def resolve_block_path(manifest_path: str | Path, block_path: str) -> Path:
    """Block paths are relative to the manifest's directory unless absolute."""
    p = Path(block_path)
    return p if p.is_absolute() else Path(manifest_path).parent / p


# ---------------------------------------------------------------------------
# binary blocks
# ---------------------------------------------------------------------------


def _write_header(f, magic: bytes, d: int, K: int) -> None:
    f.write(magic)
    f.write(_HEADER.pack(FORMAT_VERSION, d, K))


def _read_header(f, magic: bytes, path) -> tuple[int, int]:
    got = f.read(len(magic))
    if got != magic:
        raise FormatError(f"{path}: bad magic {got!r}, expected {magic!r}", offset=0)
    raw = f.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise FormatError(f"{path}: truncated header", offset=len(magic))
    version, d, K = _HEADER.unpack(raw)
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: unsupported block version {version}")
    if d == 0 or K == 0:
        raise FormatError(f"{path}: header d={d}, K={K} must be positive")
    return d, K


def write_text_block(text_features: np.ndarray, path: str | Path) -> None:
    arr = np.asarray(text_features, dtype=np.float64)
    K, d = arr.shape
    with open(path, "wb") as f:
        _write_header(f, TEXT_MAGIC, d, K)
        f.write(arr.astype("<f4").tobytes())


def read_text_block(path: str | Path, manifest: Manifest | None = None) -> np.ndarray:
    """Read and re-normalize the (K, d) text feature matrix."""
    with open(path, "rb") as f:
        d, K = _read_header(f, TEXT_MAGIC, path)
        if manifest is not None and (d, K) != (manifest.d, manifest.K):
            raise FormatError(
                f"{path}: block (d={d}, K={K}) disagrees with manifest "
                f"(d={manifest.d}, K={manifest.K})"
            )
        raw = f.read(4 * K * d)
        if len(raw) != 4 * K * d:
            raise FormatError(f"{path}: truncated text block", offset=f.tell())
    rows = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(K, d)
    _check_row_norms(rows, path)
    return normalize_rows(rows, "text features")


def _check_row_norms(rows: np.ndarray, path, offset: int | None = None) -> float:
    norms = np.linalg.norm(rows, axis=1)
    if not np.all(np.isfinite(rows)):
        raise FormatError(f"{path}: non-finite feature values", offset=offset)
    deviation = float(np.max(np.abs(norms - 1.0)))
    if deviation > MAX_NORM_DEVIATION:
        raise FormatError(
            f"{path}: feature row norm deviates from 1 by {deviation:.3g}", offset=offset
        )
    return deviation


def write_samples(records: Iterable[SampleRecord], path: str | Path, d: int, K: int) -> int:
    """Stream records to a sample block; returns how many were written."""
    count = 0
    with open(path, "wb") as f:
        _write_header(f, SAMPLE_MAGIC, d, K)
        for record in records:
            views = np.asarray(record.views, dtype=np.float64)
            if views.ndim != 2 or views.shape[0] < 1 or views.shape[1] != d:
                raise FormatError(
                    f"record {record.sample_id}: views shape {views.shape} invalid for d={d}"
                )
            label = -1 if record.true_label is None else int(record.true_label)
            if not -1 <= label < K:
                raise FormatError(f"record {record.sample_id}: label {label} out of range")
            f.write(_RECORD_HEAD.pack(record.sample_id, label, views.shape[0]))
            f.write(views.astype("<f4").tobytes())
            count += 1
    return count


class SampleReader:
    """Streaming sample-block reader: one record in memory at a time.

    Tracks ``max_norm_deviation``, the largest |row norm - 1| absorbed while
    re-normalizing stored float32 rows.
    """

    def __init__(self, path: str | Path, manifest: Manifest | None = None):
        self.path = Path(path)
        self._f = open(self.path, "rb")
        self.max_norm_deviation = 0.0
        try:
            self.d, self.K = _read_header(self._f, SAMPLE_MAGIC, self.path)
        except Exception:
            self._f.close()
            raise
        if manifest is not None and (self.d, self.K) != (manifest.d, manifest.K):
            self._f.close()
            raise FormatError(
                f"{self.path}: block (d={self.d}, K={self.K}) disagrees with manifest "
                f"(d={manifest.d}, K={manifest.K})"
            )

    def __enter__(self) -> "SampleReader":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def close(self) -> None:
        self._f.close()

    def __iter__(self) -> Iterator[SampleRecord]:
        while True:
            offset = self._f.tell()
            head = self._f.read(_RECORD_HEAD.size)
            if not head:
                return
            if len(head) != _RECORD_HEAD.size:
                raise FormatError(f"{self.path}: truncated record header", offset=offset)
            sample_id, label, n_views = _RECORD_HEAD.unpack(head)
            if n_views < 1:
                raise FormatError(
                    f"{self.path}: record {sample_id} claims n_views=0", offset=offset
                )
            if not -1 <= label < self.K:
                raise FormatError(
                    f"{self.path}: record {sample_id} label {label} out of range",
                    offset=offset,
                )
            payload = self._f.read(4 * n_views * self.d)
            if len(payload) != 4 * n_views * self.d:
                raise FormatError(
                    f"{self.path}: truncated record {sample_id}", offset=offset
                )
            views = np.frombuffer(payload, dtype="<f4").astype(np.float64)
            views = views.reshape(n_views, self.d)
            deviation = _check_row_norms(views, self.path, offset=offset)
            self.max_norm_deviation = max(self.max_norm_deviation, deviation)
            views = normalize_rows(views, "sample views")
            yield SampleRecord(
                sample_id=sample_id,
                true_label=None if label < 0 else label,
                views=views,
            )


def read_samples(path: str | Path, manifest: Manifest | None = None) -> SampleReader:
    return SampleReader(path, manifest)


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------


def synth_generate(config: SynthConfig) -> tuple[Manifest, np.ndarray, list[SampleRecord]]:
    """Deterministic synthetic stream: (manifest, text features, records).

    The manifest's block paths are filled with conventional file names; use
    :func:`synth_write` to put everything on disk.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    directions = normalize_rows(rng.standard_normal((config.K, config.d)), "class directions")
    text = rng.standard_normal((config.K, config.d))
    text = normalize_rows(directions + config.text_jitter * text, "text features")

    records = []
    for i in range(config.samples):
        c = int(rng.integers(config.K))
        base = directions[c] + config.class_spread * rng.standard_normal(config.d)
        views = np.empty((config.n_views, config.d))
        views[0] = base
        if config.n_views > 1:
            jitter = config.view_jitter * rng.standard_normal((config.n_views - 1, config.d))
            views[1:] = base + jitter
        views = normalize_rows(views, "sample views")
        records.append(SampleRecord(sample_id=i, true_label=c, views=views))

    manifest = Manifest(
        d=config.d,
        K=config.K,
        class_names=[f"class_{k}" for k in range(config.K)],
        text_path="text.crgtxt",
        samples_path="samples.crgemb",
        dataset_name="synthetic",
        note=(
            f"spheres: spread={config.class_spread}, view_jitter={config.view_jitter}, "
            f"text_jitter={config.text_jitter}, seed={config.seed}"
        ),
        insertion_noise_rate=config.label_noise_rate,
    )
    return manifest, text, records


def synth_write(config: SynthConfig, out_dir: str | Path) -> Path:
    """Generate and write manifest + blocks into ``out_dir``; returns the
    manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest, text, records = synth_generate(config)
    write_text_block(text, out / manifest.text_path)
    write_samples(records, out / manifest.samples_path, config.d, config.K)
    manifest_path = out / "manifest.json"
    write_manifest(manifest, manifest_path)
    return manifest_path
