"""Procedural image datasets and IDX-format persistence.

``blobs-stripes-checker`` draws each class from its own pattern family with
random position/frequency/phase plus additive Gaussian noise, so a CNN can
learn it while a linear model on raw pixels cannot solve it outright.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..exceptions import ConfigError, ShapeError

DATASET_KINDS = ("blobs-stripes-checker", "shifted-variant", "uniform-noise")
_FAMILIES = ("blob", "stripes", "checker", "ring", "cross", "gradient")


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: Optional[np.ndarray]
    x_test: np.ndarray
    y_test: Optional[np.ndarray]
    kind: str = "blobs-stripes-checker"
    meta: dict = field(default_factory=dict)

    @property
    def input_shape(self) -> tuple:
        return tuple(self.x_train.shape[1:])

    @property
    def n_classes(self) -> int:
        return int(self.meta.get("classes", 0))

    @property
    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.x_train, self.y_train, self.x_test, self.y_test):
            if arr is not None:
                h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


def _pattern(family: str, side: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64) / side
    if family == "blob":
        cy, cx = rng.uniform(0.25, 0.75, size=2)
        r = rng.uniform(0.10, 0.22)
        img = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
    elif family == "stripes":
        angle = rng.uniform(0, np.pi)
        freq = rng.uniform(2.0, 4.0)
        phase = rng.uniform(0, 2 * np.pi)
        img = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (np.cos(angle) * xx + np.sin(angle) * yy) + phase)
    elif family == "checker":
        n = rng.integers(2, 5)
        oy, ox = rng.uniform(0, 1, size=2)
        img = ((np.floor((yy + oy) * n) + np.floor((xx + ox) * n)) % 2).astype(np.float64)
    elif family == "ring":
        cy, cx = rng.uniform(0.35, 0.65, size=2)
        r0 = rng.uniform(0.18, 0.32)
        d = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        img = np.exp(-((d - r0) ** 2) / (2 * 0.05 ** 2))
    elif family == "cross":
        cy, cx = rng.uniform(0.3, 0.7, size=2)
        img = np.maximum(np.exp(-((yy - cy) ** 2) / 0.004), np.exp(-((xx - cx) ** 2) / 0.004))
    else:
        angle = rng.uniform(0, 2 * np.pi)
        img = np.cos(angle) * (xx - 0.5) + np.sin(angle) * (yy - 0.5) + 0.5
    return img


def _render(classes: int, side: int, channels: int, n: int, noise: float,
            rng: np.random.Generator):
    y = rng.integers(0, classes, size=n)
    x = np.empty((n, channels, side, side), dtype=np.float64)
    for i in range(n):
        base = _pattern(_FAMILIES[y[i]], side, rng)
        contrast = rng.uniform(0.6, 1.0)
        img = 0.5 + contrast * (base - 0.5)
        for c in range(channels):
            x[i, c] = img + rng.normal(0.0, noise, size=(side, side))
    return x, y


def _shift(x: np.ndarray) -> np.ndarray:
    # fixed perturbation: transpose spatial axes, compress contrast, raise brightness
    return 0.65 + 0.45 * (np.swapaxes(x, -1, -2) - 0.5)


def gen_dataset(kind: str = "blobs-stripes-checker", classes: int = 3, side: int = 16,
                channels: int = 1, n_train: int = 1000, n_test: int = 500, seed: int = 0,
                noise: float = 0.3) -> Dataset:
    """Generate a labeled (or, for ``uniform-noise``, unlabeled) image dataset."""
    if kind not in DATASET_KINDS:
        raise ConfigError(f"unknown dataset kind {kind!r}; expected one of {DATASET_KINDS}")
    if side < 8:
        raise ConfigError(f"side {side} too small for pattern generation (need >= 8)")
    if classes < 2:
        raise ConfigError(f"need at least 2 classes, got {classes}")
    if classes > len(_FAMILIES):
        raise ConfigError(f"at most {len(_FAMILIES)} pattern classes are available, got {classes}")
    if channels < 1 or n_train < 0 or n_test < 0:
        raise ConfigError("channels must be >= 1 and sample counts non-negative")
    rng = np.random.default_rng(seed)
    meta = {"classes": classes, "side": side, "channels": channels, "seed": seed,
            "noise": noise, "n_train": n_train, "n_test": n_test}
    if kind == "uniform-noise":
        xtr = rng.uniform(0.0, 1.0, size=(n_train, channels, side, side)).astype(np.float32)
        xte = rng.uniform(0.0, 1.0, size=(n_test, channels, side, side)).astype(np.float32)
        return Dataset(xtr, None, xte, None, kind, meta)
    xtr, ytr = _render(classes, side, channels, n_train, noise, rng)
    xte, yte = _render(classes, side, channels, n_test, noise, rng)
    if kind == "shifted-variant":
        xtr, xte = _shift(xtr), _shift(xte)
    return Dataset(xtr.astype(np.float32), ytr.astype(np.int64),
                   xte.astype(np.float32), yte.astype(np.int64), kind, meta)


# -- IDX persistence -----------------------------------------------------------

_IDX_CODES = {np.dtype(np.uint8): 0x08, np.dtype(np.int8): 0x09, np.dtype(">i2"): 0x0B,
              np.dtype(">i4"): 0x0C, np.dtype(">f4"): 0x0D, np.dtype(">f8"): 0x0E}
_IDX_TYPES = {v: k for k, v in _IDX_CODES.items()}


def write_idx(path, array: np.ndarray) -> None:
    """IDX file: magic (0, 0, dtype code, rank), big-endian u32 dims, big-endian payload."""
    from .._io import atomic_write_bytes

    arr = np.asarray(array)
    if arr.dtype.kind == "f":
        arr = arr.astype(">f4" if arr.dtype.itemsize <= 4 else ">f8")
    elif arr.dtype.kind in "iu":
        if arr.min(initial=0) >= 0 and arr.max(initial=0) < 256:
            arr = arr.astype(np.uint8)
        else:
            arr = arr.astype(">i4")
    code = _IDX_CODES[np.dtype(arr.dtype)]
    header = struct.pack(">BBBB", 0, 0, code, arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape)
    atomic_write_bytes(path, header + np.ascontiguousarray(arr).tobytes())


def read_idx(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise ShapeError(f"{path}: not an IDX file (bad magic)")
    code, rank = raw[2], raw[3]
    if code not in _IDX_TYPES:
        raise ShapeError(f"{path}: unknown IDX dtype code 0x{code:02x}")
    dims = struct.unpack(f">{rank}I", raw[4:4 + 4 * rank])
    dtype = _IDX_TYPES[code]
    payload = raw[4 + 4 * rank:]
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(payload) != expected:
        raise ShapeError(f"{path}: payload has {len(payload)} bytes, header implies {expected}")
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims)
    return arr.astype(dtype.newbyteorder("=")) if dtype.itemsize > 1 else arr.copy()


def save_dataset(directory, ds: Dataset) -> None:
    import json

    from .._io import atomic_write_text

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_idx(d / "train-images.idx", ds.x_train)
    write_idx(d / "test-images.idx", ds.x_test)
    if ds.y_train is not None:
        write_idx(d / "train-labels.idx", ds.y_train)
        write_idx(d / "test-labels.idx", ds.y_test)
    meta = dict(ds.meta, kind=ds.kind, fingerprint=ds.fingerprint)
    atomic_write_text(d / "dataset.json", json.dumps(meta, indent=2, sort_keys=True))


def load_dataset(directory) -> Dataset:
    import json

    d = Path(directory)
    meta = json.loads((d / "dataset.json").read_text())
    kind = meta.pop("kind", "blobs-stripes-checker")
    meta.pop("fingerprint", None)
    ytr = yte = None
    if (d / "train-labels.idx").exists():
        ytr = read_idx(d / "train-labels.idx").astype(np.int64)
        yte = read_idx(d / "test-labels.idx").astype(np.int64)
    return Dataset(read_idx(d / "train-images.idx").astype(np.float32), ytr,
                   read_idx(d / "test-images.idx").astype(np.float32), yte, kind, meta)
