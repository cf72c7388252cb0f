"""Writers for the CRG interchange formats.

This is an independent implementation of the contract the adaptation engine
reads: little-endian blocks with an 8-byte magic followed by u32 version,
u32 d, u32 K; text blocks carry K*d float32 row-major; sample blocks carry
records of u64 id, i32 label, u32 n_views, n_views*d float32. The manifest
is a JSON document naming both blocks.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

SAMPLE_MAGIC = b"CRGEMB1\x00"
TEXT_MAGIC = b"CRGTXT1\x00"
FORMAT_VERSION = 1
MANIFEST_VERSION = 1

_HEADER = struct.Struct("<III")
_RECORD_HEAD = struct.Struct("<QiI")


def write_text_block(path: Path, rows: np.ndarray) -> None:
    K, d = rows.shape
    with open(path, "wb") as f:
        f.write(TEXT_MAGIC)
        f.write(_HEADER.pack(FORMAT_VERSION, d, K))
        f.write(np.asarray(rows, dtype="<f4").tobytes())


class SampleBlockWriter:
    """Appends one record per image; use as a context manager."""

    def __init__(self, path: Path, d: int, K: int):
        self.d = d
        self._f = open(path, "wb")
        self._f.write(SAMPLE_MAGIC)
        self._f.write(_HEADER.pack(FORMAT_VERSION, d, K))
        self.count = 0

    def __enter__(self) -> "SampleBlockWriter":
        return self

    def __exit__(self, *exc_info) -> None:
        self._f.close()

    def add(self, sample_id: int, label: int, views: np.ndarray) -> None:
        assert views.ndim == 2 and views.shape[1] == self.d
        self._f.write(_RECORD_HEAD.pack(sample_id, label, views.shape[0]))
        self._f.write(np.asarray(views, dtype="<f4").tobytes())
        self.count += 1


def write_manifest(path: Path, *, d: int, K: int, class_names: list[str],
                   text_path: str, samples_path: str, dataset_name: str,
                   note: str) -> None:
    payload = {
        "d": d,
        "K": K,
        "class_names": class_names,
        "text_path": text_path,
        "samples_path": samples_path,
        "version": MANIFEST_VERSION,
        "dataset_name": dataset_name,
        "note": note,
        "insertion_noise_rate": 0.0,
    }
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
