"""Versioned binary checkpoints: config, layout, parameters, optional
optimizer state, step count and rng state.

Layout: magic b"SCCK", u32 version, u64 JSON header length, canonical JSON
header (sorted keys, no whitespace), then each tensor's raw little-endian
bytes in header order. The header records every tensor's name, shape and
dtype, so shape inconsistencies and truncation are detected before a network
is constructed. Round trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import CorruptionError, FormatError, VersionError
from .network import Network, NetworkConfig
from .optim import RmspropState

MAGIC = b"SCCK"
VERSION = 1

_DTYPES = {"float32": "<f4", "float64": "<f8"}


@dataclass
class Checkpoint:
    config: NetworkConfig
    params: dict[str, np.ndarray]
    step_count: int = 0
    optimizer: Optional[RmspropState] = None
    rng_state: Optional[dict] = None

    @classmethod
    def of(
        cls,
        net: Network,
        step_count: int = 0,
        optimizer: Optional[RmspropState] = None,
        rng: Optional[np.random.Generator] = None,
    ) -> "Checkpoint":
        return cls(
            config=net.config,
            params=net.params,
            step_count=step_count,
            optimizer=optimizer,
            rng_state=rng.bit_generator.state if rng is not None else None,
        )

    def network(self) -> Network:
        return Network(config=self.config, params=self.params)


def _tensor_entry(name: str, arr: np.ndarray) -> dict:
    return {"name": name, "shape": list(arr.shape), "dtype": str(arr.dtype)}


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    tensors: list[tuple[str, np.ndarray]] = sorted(ckpt.params.items())
    opt_tensors: list[tuple[str, np.ndarray]] = []
    header = {
        "config": ckpt.config.to_dict(),
        "step_count": ckpt.step_count,
        "rng_state": _jsonable_rng(ckpt.rng_state),
        "params": [_tensor_entry(n, a) for n, a in tensors],
        "optimizer": None,
    }
    if ckpt.optimizer is not None:
        opt_tensors = sorted(ckpt.optimizer.cache.items())
        header["optimizer"] = {
            "step": ckpt.optimizer.step,
            "cache": [_tensor_entry(n, a) for n, a in opt_tensors],
        }
    blob = canonical_json(header)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", VERSION, len(blob)))
        f.write(blob)
        for _, arr in tensors + opt_tensors:
            f.write(np.ascontiguousarray(arr, dtype=_DTYPES[str(arr.dtype)]).tobytes())


def _jsonable_rng(state: Optional[dict]):
    if state is None:
        return None
    # PCG64 state nests plain ints; json handles arbitrary precision.
    return json.loads(json.dumps(state))


def _read_exact(f, n: int, path) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CorruptionError(f"{path}: truncated checkpoint (wanted {n} bytes, got {len(buf)})")
    return buf


def _read_tensors(f, entries: list[dict], path) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for e in entries:
        dtype = np.dtype(_DTYPES[e["dtype"]])
        shape = tuple(int(s) for s in e["shape"])
        count = int(np.prod(shape)) if shape else 1
        raw = _read_exact(f, count * dtype.itemsize, path)
        out[e["name"]] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return out


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        version, blob_len = struct.unpack("<IQ", _read_exact(f, 12, path))
        if version != VERSION:
            raise VersionError(f"{path}: format version {version}, this build reads {VERSION}")
        try:
            header = json.loads(_read_exact(f, blob_len, path))
        except json.JSONDecodeError as e:
            raise CorruptionError(f"{path}: unreadable header: {e}") from e
        config = NetworkConfig.from_dict(header["config"])
        params = _read_tensors(f, header["params"], path)
        optimizer = None
        if header.get("optimizer"):
            cache = _read_tensors(f, header["optimizer"]["cache"], path)
            optimizer = RmspropState(cache=cache, step=int(header["optimizer"]["step"]))
        trailing = f.read(1)
        if trailing:
            raise CorruptionError(f"{path}: trailing bytes after tensor payload")

    ckpt = Checkpoint(
        config=config,
        params=params,
        step_count=int(header["step_count"]),
        optimizer=optimizer,
        rng_state=header.get("rng_state"),
    )
    _validate_shapes(ckpt, path)
    return ckpt


def _validate_shapes(ckpt: Checkpoint, path) -> None:
    from .network import build_network

    reference = build_network(ckpt.config)
    if set(reference.params) != set(ckpt.params):
        raise CorruptionError(f"{path}: parameter names do not match the config")
    for name, arr in reference.params.items():
        if ckpt.params[name].shape != arr.shape:
            raise CorruptionError(
                f"{path}: tensor {name} has shape {ckpt.params[name].shape}, "
                f"config implies {arr.shape}"
            )
    if ckpt.optimizer is not None:
        for name, arr in ckpt.params.items():
            got = ckpt.optimizer.cache.get(name)
            if got is None or got.shape != arr.shape:
                raise CorruptionError(f"{path}: optimizer state inconsistent at {name}")
