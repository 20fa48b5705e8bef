"""Binary dataset files of single-factor batches with ground-truth params.

Layout (all integers little-endian):

    magic   b"SCDS"
    u32     format version (currently 1)
    u32     resolution
    u32     intrinsic dimension
    u8      scene kind (0 = head, 1 = chair)
    u32     batch count
    batches, each:
        u8      active-factor tag (0 azimuth, 1 elevation, 2 light, 3 intrinsic)
        u32     batch size
        per example:
            f32 azimuth, f32 elevation, f32 light_azimuth,
            f32 x intrinsic_dim,
            f32 x resolution^2 image, row-major
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import ContractError, CorruptionError, FormatError, VersionError
from .scene import INTRINSIC_DIM, SCENE_KINDS, SceneParams, TransformBatch, make_batch
from .training import select_batch_type

MAGIC = b"SCDS"
VERSION = 1

FACTOR_TAGS = {"azimuth": 0, "elevation": 1, "light_azimuth": 2, "intrinsic": 3}
TAG_FACTORS = {v: k for k, v in FACTOR_TAGS.items()}


@dataclass(frozen=True)
class DatasetInfo:
    resolution: int
    intrinsic_dim: int
    kind: str
    n_batches: int


class DatasetWriter:
    """Sequential batch writer; the header is finalized on close."""

    def __init__(self, path, resolution: int, kind: str = "head"):
        if kind not in SCENE_KINDS:
            raise ContractError(f"unknown scene kind {kind!r}")
        self.path = path
        self.resolution = resolution
        self.kind = kind
        self.n_batches = 0
        self._f = open(path, "wb")
        self._write_header()

    def _write_header(self):
        self._f.seek(0)
        self._f.write(MAGIC)
        self._f.write(
            struct.pack(
                "<III B I",
                VERSION,
                self.resolution,
                INTRINSIC_DIM,
                SCENE_KINDS.index(self.kind),
                self.n_batches,
            )
        )

    def write_batch(self, batch: TransformBatch) -> None:
        batch.validate()
        b, _, h, w = batch.images.shape
        if h != self.resolution or w != self.resolution:
            raise ContractError(f"batch resolution {h}x{w} != dataset resolution {self.resolution}")
        self._f.write(struct.pack("<B I", FACTOR_TAGS[batch.active_factor], b))
        for p, img in zip(batch.params, batch.images):
            rec = np.array(
                [p.azimuth, p.elevation, p.light_azimuth, *p.intrinsic], dtype="<f4"
            )
            self._f.write(rec.tobytes())
            self._f.write(np.ascontiguousarray(img[0], dtype="<f4").tobytes())
        self.n_batches += 1

    def close(self) -> None:
        self._write_header()
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def _read_exact(f, n: int, path) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CorruptionError(f"{path}: truncated file (wanted {n} bytes, got {len(buf)})")
    return buf


def read_info(path) -> DatasetInfo:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        version, res, intr, kind_tag, n_batches = struct.unpack(
            "<III B I", _read_exact(f, 17, path)
        )
        if version != VERSION:
            raise VersionError(f"{path}: format version {version}, this build reads {VERSION}")
        if kind_tag >= len(SCENE_KINDS):
            raise CorruptionError(f"{path}: unknown scene kind tag {kind_tag}")
        if intr != INTRINSIC_DIM:
            raise CorruptionError(f"{path}: intrinsic dim {intr}, expected {INTRINSIC_DIM}")
        return DatasetInfo(res, intr, SCENE_KINDS[kind_tag], n_batches)


def read_batches(path) -> Iterator[TransformBatch]:
    """Stream batches back; images are bit-identical to what was written."""
    info = read_info(path)
    res = info.resolution
    rec_len = 3 + info.intrinsic_dim
    with open(path, "rb") as f:
        f.seek(4 + 17)
        for _ in range(info.n_batches):
            tag, b = struct.unpack("<B I", _read_exact(f, 5, path))
            if tag not in TAG_FACTORS:
                raise CorruptionError(f"{path}: unknown factor tag {tag}")
            if b < 2:
                raise CorruptionError(f"{path}: batch size {b} below minimum")
            params = []
            images = np.empty((b, 1, res, res), dtype=np.float32)
            for i in range(b):
                rec = np.frombuffer(_read_exact(f, 4 * rec_len, path), dtype="<f4")
                params.append(
                    SceneParams(
                        azimuth=float(rec[0]),
                        elevation=float(rec[1]),
                        light_azimuth=float(rec[2]),
                        intrinsic=tuple(float(x) for x in rec[3:]),
                        kind=info.kind,
                    )
                )
                img = np.frombuffer(_read_exact(f, 4 * res * res, path), dtype="<f4")
                images[i, 0] = img.reshape(res, res)
            yield TransformBatch(images=images, params=params, active_factor=TAG_FACTORS[tag])


def load_batches(path) -> list[TransformBatch]:
    return list(read_batches(path))


def make_dataset(
    rng: np.random.Generator,
    n_batches: int,
    mix: dict[str, float],
    resolution: int,
    path,
    batch_size: int = 20,
    kind: str = "head",
) -> DatasetInfo:
    """Generate and persist ``n_batches`` batches with factor types drawn
    from ``mix``; ground-truth params ride along for evaluation."""
    if n_batches < 0:
        raise ContractError("n_batches must be nonnegative")
    with DatasetWriter(path, resolution, kind) as w:
        for _ in range(n_batches):
            factor = select_batch_type(rng, mix)
            w.write_batch(make_batch(rng, factor, batch_size=batch_size, resolution=resolution, kind=kind))
    return read_info(path)
