"""Instance and result files.

``points.bin`` holds the magic bytes ``LDME1``, little-endian u64 ``n`` and
``d``, then ``n * d`` little-endian f64 values in row-major order.
``manifest.json`` records the ground truth and the fast/slow split.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core_stats import Dataset, Truth
from .errors import ValidationError

MAGIC = b"LDME1"
_HEADER = struct.Struct("<QQ")


def write_points(path: str | Path, points: np.ndarray) -> None:
    pts = np.ascontiguousarray(points, dtype="<f8")
    if pts.ndim != 2:
        raise ValidationError("points must be 2-D")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(*pts.shape))
        fh.write(pts.tobytes(order="C"))


def read_points(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    head = len(MAGIC) + _HEADER.size
    if len(raw) < head or raw[: len(MAGIC)] != MAGIC:
        raise ValidationError(f"{path} is not an LDME1 points file")
    n, d = _HEADER.unpack_from(raw, len(MAGIC))
    if len(raw) != head + 8 * n * d:
        raise ValidationError(f"{path} has {len(raw) - head} data bytes, expected {8 * n * d}")
    return np.frombuffer(raw, dtype="<f8", offset=head).reshape(n, d).astype(np.float64)


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(dumps(obj))


@dataclass(frozen=True)
class Instance:
    dataset: Dataset
    slow_indices: np.ndarray
    manifest: dict

    @property
    def fast_indices(self) -> np.ndarray:
        mask = np.ones(self.dataset.n, dtype=bool)
        mask[self.slow_indices] = False
        return np.flatnonzero(mask)


def write_instance(
    directory: str | Path, dataset: Dataset, spec: dict, seed: int, slow_indices: np.ndarray
) -> None:
    if dataset.truth is None:
        raise ValidationError("instances carry ground truth")
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    write_points(out / "points.bin", dataset.points)
    manifest = {
        "n": dataset.n,
        "d": dataset.d,
        "alpha": dataset.truth.alpha,
        "seed": seed,
        "mu_star": [float(x) for x in dataset.truth.true_mean],
        "inlier_indices": [int(i) for i in dataset.truth.inlier_indices],
        "slow_indices": [int(i) for i in slow_indices],
        "spec": spec,
    }
    write_json(out / "manifest.json", manifest)


def read_instance(directory: str | Path) -> Instance:
    src = Path(directory)
    try:
        manifest = json.loads((src / "manifest.json").read_text())
    except FileNotFoundError as exc:
        raise ValidationError(f"no manifest.json in {src}") from exc
    points = read_points(src / "points.bin")
    if points.shape != (manifest["n"], manifest["d"]):
        raise ValidationError("points.bin does not match the manifest shape")
    truth = Truth(
        np.asarray(manifest["mu_star"], dtype=np.float64),
        np.asarray(manifest["inlier_indices"], dtype=np.int64),
        float(manifest["alpha"]),
    )
    slow = np.asarray(manifest.get("slow_indices", []), dtype=np.int64)
    if slow.size and (slow.min() < 0 or slow.max() >= points.shape[0]):
        raise ValidationError("slow index out of range")
    return Instance(Dataset(points, truth), slow, manifest)
