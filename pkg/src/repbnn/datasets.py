"""Toy datasets for desk-scale training runs.

Three sources, selected by the dataset path string:

* ``blobs`` (optionally ``blobs:key=value,...``) generates class-conditioned
  bump images with additive noise, fully determined by the seed;
* a directory containing ``images.idx`` and ``labels.idx`` in the usual
  IDX layout (magic, dims, ubyte payload);
* a directory containing CIFAR-10 python batches (``data_batch_1`` ...),
  loaded without any accuracy-reproduction ambition.
"""

from __future__ import annotations

import os
import pickle
import struct

import numpy as np

from .errors import DatasetError


def make_blobs(n_samples: int = 512, num_classes: int = 2,
               image_dims: tuple[int, int, int] = (3, 8, 8),
               noise: float = 0.35, seed: int = 0):
    """Class-templated bump images: template[class] + noise * N(0, 1).

    Templates are smooth Gaussian bumps at class-specific positions, so the
    classes are linearly separable at low noise.  Returns float32 images
    (n, c, h, w) and int64 labels.
    """
    if n_samples < num_classes or num_classes < 2:
        raise DatasetError("need at least two classes and one sample per class")
    c, h, w = image_dims
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    templates = np.empty((num_classes, c, h, w), dtype=np.float64)
    for k in range(num_classes):
        ang = 2 * np.pi * k / num_classes
        cy = h / 2 + (h / 4) * np.sin(ang)
        cx = w / 2 + (w / 4) * np.cos(ang)
        bump = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * (h / 6) ** 2))
        for ch in range(c):
            templates[k, ch] = bump * (1.0 + 0.25 * ch)
    labels = rng.integers(0, num_classes, size=n_samples)
    images = templates[labels] + noise * rng.standard_normal((n_samples, c, h, w))
    return images.astype(np.float32), labels.astype(np.int64)


def _read_idx(path: str) -> np.ndarray:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise DatasetError(f"cannot read {path}: {e}") from None
    if len(raw) < 4:
        raise DatasetError(f"{path}: truncated IDX header")
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0:
        raise DatasetError(f"{path}: bad IDX magic")
    dtypes = {0x08: np.uint8, 0x09: np.int8, 0x0B: ">i2", 0x0C: ">i4",
              0x0D: ">f4", 0x0E: ">f8"}
    if dtype_code not in dtypes:
        raise DatasetError(f"{path}: unsupported IDX dtype 0x{dtype_code:02x}")
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    data = np.frombuffer(raw[4 + 4 * ndim:], dtype=dtypes[dtype_code])
    if data.size != int(np.prod(dims)):
        raise DatasetError(f"{path}: payload does not match dims {dims}")
    return data.reshape(dims)


def load_idx_dir(path: str):
    """Load images.idx / labels.idx from a directory."""
    images = _read_idx(os.path.join(path, "images.idx"))
    labels = _read_idx(os.path.join(path, "labels.idx"))
    if images.ndim == 3:
        images = images[:, None, :, :]
    if images.ndim != 4:
        raise DatasetError(f"images.idx must be rank 3 or 4, got {images.shape}")
    if labels.ndim != 1 or labels.shape[0] != images.shape[0]:
        raise DatasetError("labels.idx does not match images.idx")
    x = images.astype(np.float32)
    if images.dtype == np.uint8:
        x /= 255.0
    return x, labels.astype(np.int64)


def load_cifar10(path: str):
    """Load CIFAR-10 python batches from a directory."""
    xs, ys = [], []
    names = [f"data_batch_{i}" for i in range(1, 6)] + ["test_batch"]
    found = [n for n in names if os.path.exists(os.path.join(path, n))]
    if not found:
        raise DatasetError(f"no CIFAR-10 batches under {path}")
    for name in found:
        try:
            with open(os.path.join(path, name), "rb") as f:
                d = pickle.load(f, encoding="bytes")
        except Exception as e:
            raise DatasetError(f"cannot decode {name}: {e}") from None
        xs.append(np.asarray(d[b"data"], dtype=np.uint8))
        ys.append(np.asarray(d[b"labels"], dtype=np.int64))
    x = np.concatenate(xs).reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return x, np.concatenate(ys)


def load_dataset(path: str, *, seed: int = 0,
                 image_dims: tuple[int, int, int] = (3, 8, 8),
                 num_classes: int = 2):
    """Dispatch on the dataset path; see the module docstring."""
    if path == "blobs" or path.startswith("blobs:"):
        kwargs = dict(n_samples=512, noise=0.35)
        if ":" in path:
            for part in path.split(":", 1)[1].split(","):
                if not part:
                    continue
                try:
                    key, value = part.split("=")
                except ValueError:
                    raise DatasetError(f"bad blobs option {part!r}") from None
                if key == "n":
                    kwargs["n_samples"] = int(value)
                elif key == "noise":
                    kwargs["noise"] = float(value)
                else:
                    raise DatasetError(f"unknown blobs option {key!r}")
        return make_blobs(num_classes=num_classes, image_dims=image_dims,
                          seed=seed, **kwargs)
    if os.path.isdir(path):
        if os.path.exists(os.path.join(path, "images.idx")):
            return load_idx_dir(path)
        return load_cifar10(path)
    raise DatasetError(f"no dataset at {path!r}")
