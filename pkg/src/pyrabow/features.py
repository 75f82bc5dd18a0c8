"""Dense keypoint grids and SIFT-style gradient-orientation descriptors."""
from __future__ import annotations

import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import _native
from ._native._fallback import DESCRIPTOR_DIM, NUM_CELLS
from .dataset import GrayImage, load_grayscale

CACHE_MAGIC = b"BVWD"
CACHE_VERSION = 1


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class DenseGridSpec:
    step: int = 8
    patch: int = 16
    scales: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if self.step < 1:
            raise FeatureError(f"grid step must be >= 1, got {self.step}")
        if self.patch < 8:
            raise FeatureError(f"patch must be >= 8 pixels, got {self.patch}")
        if not self.scales or any(s <= 0 for s in self.scales):
            raise FeatureError(f"scales must be non-empty and positive, got {self.scales}")
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))

    def patch_size(self, scale: float) -> int:
        return max(NUM_CELLS, int(round(self.patch * scale)))


class Keypoint(NamedTuple):
    x: float
    y: float
    scale: float


class Gradients(NamedTuple):
    magnitude: np.ndarray
    orientation: np.ndarray


@dataclass
class ImageDescriptors:
    """Keypoints (x, y, scale rows) and their descriptors for one image."""

    width: int
    height: int
    keypoints: np.ndarray = field(repr=False)
    descriptors: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.keypoints)


def _axis_positions(length: int, ps: int, step: int) -> np.ndarray:
    margin = int(math.ceil(ps / 2))
    last = length - ps + ps // 2  # largest centre whose patch still fits
    if last < margin:
        return np.zeros(0, dtype=np.int64)
    return np.arange(margin, last + 1, step, dtype=np.int64)


def dense_keypoints(width: int, height: int, spec: DenseGridSpec) -> np.ndarray:
    """Grid keypoints as an ``(n, 3)`` array of ``x, y, scale``.

    Scales form the outer loop; within a scale the order is row-major.
    Images too small for a patch contribute no keypoints.
    """
    blocks = []
    for s in spec.scales:
        ps = spec.patch_size(s)
        xs = _axis_positions(width, ps, spec.step)
        ys = _axis_positions(height, ps, spec.step)
        if len(xs) == 0 or len(ys) == 0:
            continue
        gy, gx = np.meshgrid(ys, xs, indexing="ij")
        blocks.append(np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, s)]))
    if not blocks:
        return np.zeros((0, 3))
    return np.vstack(blocks).astype(np.float64)


def image_gradients(img: GrayImage) -> Gradients:
    """Central differences inside, one-sided at the border; orientation in [0, 2*pi)."""
    px = np.asarray(img.pixels, dtype=np.float64)
    if px.ndim != 2 or px.shape[0] < 2 or px.shape[1] < 2:
        raise FeatureError(f"gradients need an image of at least 2x2 pixels, got {px.shape[::-1]}")
    gy, gx = np.gradient(px)
    mag = np.hypot(gx, gy)
    ori = np.arctan2(gy, gx)
    ori[ori < 0] += 2.0 * math.pi
    ori[ori >= 2.0 * math.pi] = 0.0
    return Gradients(mag, ori)


def _check_inside(grads: Gradients, xs, ys, ps: int):
    h, w = grads.magnitude.shape
    x0 = np.asarray(xs) - ps // 2
    y0 = np.asarray(ys) - ps // 2
    if np.any(x0 < 0) or np.any(y0 < 0) or np.any(x0 + ps > w) or np.any(y0 + ps > h):
        raise FeatureError(f"descriptor patch of {ps}px falls outside the {w}x{h} image")


def sift_descriptor(grads: Gradients, kp: Keypoint, patch: int) -> np.ndarray:
    """128-D descriptor of the ``patch``-pixel square centred on ``kp``."""
    x, y = int(round(kp.x)), int(round(kp.y))
    _check_inside(grads, [x], [y], int(patch))
    return _native.sift_descriptors(grads.magnitude, grads.orientation,
                                    np.array([x]), np.array([y]), int(patch))[0]


def extract_dense(img: GrayImage, spec: DenseGridSpec) -> ImageDescriptors:
    kps = dense_keypoints(img.width, img.height, spec)
    if len(kps) == 0:
        return ImageDescriptors(img.width, img.height, kps, np.zeros((0, DESCRIPTOR_DIM)))
    grads = image_gradients(img)
    out = np.empty((len(kps), DESCRIPTOR_DIM))
    for s in spec.scales:
        sel = np.flatnonzero(kps[:, 2] == s)
        if len(sel) == 0:
            continue
        ps = spec.patch_size(s)
        xs = kps[sel, 0].astype(np.int64)
        ys = kps[sel, 1].astype(np.int64)
        out[sel] = _native.sift_descriptors(grads.magnitude, grads.orientation, xs, ys, ps)
    return ImageDescriptors(img.width, img.height, kps, out)


def _as_stored(d: ImageDescriptors) -> ImageDescriptors:
    # round to the float32 precision of the cache so fresh and cached runs agree bit for bit
    return ImageDescriptors(
        d.width, d.height,
        d.keypoints.astype(np.float32).astype(np.float64),
        d.descriptors.astype(np.float32).astype(np.float64),
    )


def extract_paths(paths: Sequence[str], spec: DenseGridSpec, threads: int = 1) -> list[ImageDescriptors]:
    """Decode and describe each image; output order follows ``paths``."""
    def work(p):
        return _as_stored(extract_dense(load_grayscale(p), spec))

    if threads <= 1 or len(paths) < 2:
        return [work(p) for p in paths]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(work, paths))


def write_descriptor_cache(path, items: Sequence[tuple[int, ImageDescriptors]], spec: DenseGridSpec):
    """Write the binary descriptor cache plus a JSON sidecar with image sizes.

    Binary layout (little-endian): ``BVWD``, version u32, image count u32, then
    per image: record index u32, keypoint count u32, dim u32, ``n*3`` float32
    keypoint values (x, y, scale), ``n*dim`` float32 descriptor values.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<II", CACHE_VERSION, len(items)))
        for rec, d in items:
            fh.write(struct.pack("<III", rec, len(d), DESCRIPTOR_DIM))
            fh.write(np.ascontiguousarray(d.keypoints, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(d.descriptors, dtype="<f4").tobytes())
    sidecar = {
        "grid": {"step": spec.step, "patch": spec.patch, "scales": list(spec.scales)},
        "sizes": {str(rec): [d.width, d.height] for rec, d in items},
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, sort_keys=True))


def read_descriptor_cache(path) -> dict[int, ImageDescriptors]:
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != CACHE_MAGIC:
        raise FeatureError(f"{path} is not a descriptor cache (bad magic)")
    version, count = struct.unpack_from("<II", data, 4)
    if version != CACHE_VERSION:
        raise FeatureError(f"{path}: unsupported cache version {version}")
    sizes = {}
    side = Path(str(path) + ".json")
    if side.exists():
        sizes = {int(k): v for k, v in json.loads(side.read_text())["sizes"].items()}
    out = {}
    pos = 12
    try:
        for _ in range(count):
            rec, n, dim = struct.unpack_from("<III", data, pos)
            pos += 12
            kps = np.frombuffer(data, dtype="<f4", count=n * 3, offset=pos).reshape(n, 3)
            pos += n * 3 * 4
            desc = np.frombuffer(data, dtype="<f4", count=n * dim, offset=pos).reshape(n, dim)
            pos += n * dim * 4
            w, h = sizes.get(rec, (0, 0))
            out[rec] = ImageDescriptors(int(w), int(h), kps.astype(np.float64), desc.astype(np.float64))
    except (struct.error, ValueError) as exc:
        raise FeatureError(f"{path}: truncated descriptor cache ({exc})") from None
    return out
