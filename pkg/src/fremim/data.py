"""Synthetic multi-channel phantoms, fold splits and the on-disk tensor format.

A ``.tns`` file is one JSON header line followed by the raw little-endian
tensor bytes. Bundles (used for checkpoints) follow the same layout with a
table of named tensors in the header.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, GenerationFailed, InvalidSplit, TruncationError

FORMAT_VERSION = 1
DTYPES = {"float32": np.dtype("<f4"), "int32": np.dtype("<i4")}
MAX_RETRIES = 100
FG_RANGE = (0.10, 0.60)
N_FOLDS = 5


@dataclass
class PhantomSample:
    image: np.ndarray  # float32, C x H x W
    labels: np.ndarray  # int32, H x W
    seed: int


@dataclass
class PhantomDataset:
    images: np.ndarray  # N x C x H x W
    labels: np.ndarray  # N x H x W
    params: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.images)

    @property
    def channels(self) -> int:
        return self.images.shape[1]

    @property
    def size(self) -> int:
        return self.images.shape[-1]

    @property
    def n_classes(self) -> int:
        return int(self.params.get("n_classes", int(self.labels.max()) + 1))

    def subset(self, indices) -> "PhantomDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return PhantomDataset(self.images[indices], self.labels[indices], dict(self.params))


def _ellipse(shape, cx, cy, a, b, theta):
    xs, ys = np.meshgrid(np.arange(shape[0]), np.arange(shape[1]), indexing="ij")
    dx, dy = xs + 0.5 - cx, ys + 0.5 - cy
    c, s = math.cos(theta), math.sin(theta)
    u, v = c * dx + s * dy, -s * dx + c * dy
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _draw(rng: np.random.Generator, size: int, channels: int, n_classes: int):
    shape = (size, size)
    n_levels = int(rng.integers(1, min(3, n_classes - 1) + 1))
    a, b = rng.uniform(0.18, 0.42, size=2) * size
    r = max(a, b)
    cx, cy = rng.uniform(r, size - r, size=2) if r < size / 2 else (size / 2, size / 2)
    theta = rng.uniform(0, math.pi)
    labels = np.zeros(shape, dtype=np.int32)
    region = _ellipse(shape, cx, cy, a, b, theta)
    labels[region] = 1
    for level in range(2, n_levels + 1):
        scale = rng.uniform(0.35, 0.7)
        a, b = a * scale, b * scale
        # keep the child centre well inside the parent
        cx += rng.uniform(-0.5, 0.5) * a
        cy += rng.uniform(-0.5, 0.5) * b
        theta = theta + rng.uniform(-0.5, 0.5)
        region = region & _ellipse(shape, cx, cy, a, b, theta)
        labels[region] = level

    base = rng.uniform(0.25, 1.0, size=(n_levels + 1, channels))
    freq = rng.uniform(0.5, 2.0, size=(channels, 2)) * 2 * math.pi / size
    phase = rng.uniform(0, 2 * math.pi, size=channels)
    xs, ys = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    image = np.zeros((channels,) + shape, dtype=np.float64)
    fg = labels > 0
    for c in range(channels):
        texture = 1.0 + 0.15 * np.sin(freq[c, 0] * xs + freq[c, 1] * ys + phase[c])
        noise = rng.normal(0.0, 0.05, size=shape)
        vals = base[labels, c] * texture + noise
        image[c] = np.where(fg, np.clip(vals, 0.05, None), 0.0)
    return normalize(image).astype(np.float32), labels


def normalize(image: np.ndarray) -> np.ndarray:
    """Scale each channel into [0, 1] by its maximum; zeros stay zero."""
    image = np.asarray(image, dtype=np.float64)
    peak = image.reshape(image.shape[0], -1).max(axis=1)
    peak = np.where(peak > 0, peak, 1.0)
    return np.clip(image / peak[:, None, None], 0.0, 1.0)


def gen_phantom(seed: int, size: int = 32, channels: int = 4, n_classes: int = 4) -> PhantomSample:
    if size % 16 or size <= 0:
        raise ValueError(f"size must be a positive multiple of 16, got {size}")
    if channels < 1 or n_classes < 2:
        raise ValueError("need channels >= 1 and n_classes >= 2")
    rng = np.random.default_rng(seed)
    for _ in range(MAX_RETRIES):
        image, labels = _draw(rng, size, channels, n_classes)
        frac = float((labels > 0).mean())
        if FG_RANGE[0] <= frac <= FG_RANGE[1] and np.all(image[:, labels > 0] > 0):
            return PhantomSample(image, labels, seed)
    raise GenerationFailed(f"seed {seed}: no valid phantom after {MAX_RETRIES} draws")


def gen_dataset(n: int, seed: int = 0, size: int = 32, channels: int = 4,
                n_classes: int = 4) -> PhantomDataset:
    samples = [gen_phantom(seed * 100_003 + i, size, channels, n_classes) for i in range(n)]
    params = {"n": n, "seed": seed, "size": size, "channels": channels, "n_classes": n_classes}
    return PhantomDataset(
        np.stack([s.image for s in samples]),
        np.stack([s.labels for s in samples]),
        params,
    )


def make_splits(n_samples: int, seed: int = 0) -> list[np.ndarray]:
    if n_samples < N_FOLDS:
        raise InvalidSplit(f"need at least {N_FOLDS} samples, got {n_samples}")
    order = np.random.default_rng(seed).permutation(n_samples)
    return [np.sort(f) for f in np.array_split(order, N_FOLDS)]


# -- tensor container ---------------------------------------------------------

def _dtype_name(arr: np.ndarray) -> str:
    for name, dt in DTYPES.items():
        if arr.dtype.kind == dt.kind and arr.dtype.itemsize == dt.itemsize:
            return name
    raise FormatError(f"unsupported dtype {arr.dtype}; use float32 or int32")


def _header_line(header: dict) -> bytes:
    return (json.dumps(header, sort_keys=True) + "\n").encode("utf-8")


def _read_header(fh) -> dict:
    line = fh.readline()
    if not line.endswith(b"\n"):
        raise FormatError("header is not newline-terminated")
    try:
        header = json.loads(line)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"corrupt header: {exc}") from None
    if not isinstance(header, dict):
        raise FormatError("header must be a JSON object")
    return header


def write_container(tensor, path, role: str = "tensor") -> None:
    arr = np.asarray(tensor)
    name = _dtype_name(arr)
    data = np.ascontiguousarray(arr, dtype=DTYPES[name]).tobytes()
    header = {
        "format_version": FORMAT_VERSION,
        "shape": list(arr.shape),
        "dtype": name,
        "byte_order": "little",
        "role": role,
        "payload_bytes": len(data),
    }
    with open(path, "wb") as fh:
        fh.write(_header_line(header))
        fh.write(data)


def _decode(payload: bytes, dtype: str, shape) -> np.ndarray:
    if dtype not in DTYPES:
        raise FormatError(f"unsupported dtype {dtype!r}")
    expected = math.prod(shape) * DTYPES[dtype].itemsize
    if len(payload) != expected:
        raise TruncationError(f"payload holds {len(payload)} bytes, shape needs {expected}")
    return np.frombuffer(payload, dtype=DTYPES[dtype]).reshape(shape).astype(DTYPES[dtype].newbyteorder("="))


def read_container(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = _read_header(fh)
        payload = fh.read()
    try:
        shape, dtype, declared = header["shape"], header["dtype"], header["payload_bytes"]
    except KeyError as exc:
        raise FormatError(f"header missing key {exc}") from None
    if len(payload) != declared:
        raise TruncationError(f"declared {declared} payload bytes, found {len(payload)}")
    return _decode(payload, dtype, shape)


def write_bundle(tensors: dict, path, metadata: dict | None = None) -> None:
    """Write several named tensors plus JSON metadata into one file."""
    table, blobs, offset = [], [], 0
    for name, tensor in tensors.items():
        arr = np.asarray(tensor)
        dt = _dtype_name(arr)
        blob = np.ascontiguousarray(arr, dtype=DTYPES[dt]).tobytes()
        table.append({"name": name, "shape": list(arr.shape), "dtype": dt,
                      "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {"format_version": FORMAT_VERSION, "byte_order": "little", "role": "bundle",
              "payload_bytes": offset, "tensors": table, "metadata": metadata or {}}
    with open(path, "wb") as fh:
        fh.write(_header_line(header))
        for blob in blobs:
            fh.write(blob)


def read_bundle(path) -> tuple[dict, dict]:
    with open(path, "rb") as fh:
        header = _read_header(fh)
        payload = fh.read()
    if header.get("role") != "bundle" or "tensors" not in header:
        raise FormatError("file is not a tensor bundle")
    if len(payload) != header["payload_bytes"]:
        raise TruncationError(
            f"declared {header['payload_bytes']} payload bytes, found {len(payload)}")
    tensors = {}
    for entry in header["tensors"]:
        start = entry["offset"]
        tensors[entry["name"]] = _decode(payload[start:start + entry["nbytes"]],
                                         entry["dtype"], entry["shape"])
    return tensors, header.get("metadata", {})


# -- dataset directory --------------------------------------------------------

def save_dataset(dataset: PhantomDataset, directory) -> None:
    directory = Path(directory)
    (directory / "samples").mkdir(parents=True, exist_ok=True)
    for i in range(len(dataset)):
        write_container(dataset.images[i], directory / "samples" / f"{i}.img.tns", role="image")
        write_container(dataset.labels[i].astype(np.int32),
                        directory / "samples" / f"{i}.lbl.tns", role="labels")
    manifest = {"format_version": FORMAT_VERSION, "n_samples": len(dataset),
                "generator": dataset.params}
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(directory) -> PhantomDataset:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        raise FileNotFoundError(f"{manifest_path} not found")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    n = manifest["n_samples"]
    images = [read_container(directory / "samples" / f"{i}.img.tns") for i in range(n)]
    labels = [read_container(directory / "samples" / f"{i}.lbl.tns") for i in range(n)]
    return PhantomDataset(np.stack(images), np.stack(labels), dict(manifest.get("generator", {})))


def dataset_fingerprint(directory) -> dict:
    """Map of relative path to (size, mtime_ns); used to check a directory is untouched."""
    directory = Path(directory)
    out = {}
    for root, _, files in os.walk(directory):
        for f in files:
            p = Path(root) / f
            st = p.stat()
            out[str(p.relative_to(directory))] = (st.st_size, st.st_mtime_ns)
    return out
