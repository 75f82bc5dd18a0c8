"""Spatial-pyramid word histograms, histogram normalization and PCA."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1
NORMALIZATIONS = ("none", "l2", "sum", "standard")
SHAPES = ("square", "horizontal")


class EncodingError(ValueError):
    pass


@dataclass(frozen=True)
class PyramidSpec:
    shape: str = "horizontal"
    level: int = 1
    max_level: int = 2

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise EncodingError(f"unknown pyramid shape {self.shape!r}")
        if not 0 <= self.level <= self.max_level:
            raise EncodingError(f"pyramid level must lie in [0, {self.max_level}], got {self.level}")

    def regions_at(self, level: int) -> tuple[int, int]:
        """(columns, rows) of the partition contributed by one level."""
        if level == 0:
            return 1, 1
        if self.shape == "square":
            return 2 ** level, 2 ** level
        return 1, 3 * level

    @property
    def num_regions(self) -> int:
        return sum(c * r for c, r in (self.regions_at(l) for l in range(self.level + 1)))


@dataclass(frozen=True)
class RegionLayout:
    """Rectangles ``(x0, y0, x1, y1)``, level-major then row-major."""

    regions: tuple[tuple[int, int, int, int], ...]
    width: int
    height: int

    def __len__(self):
        return len(self.regions)


def _cuts(length: int, n: int) -> list[int]:
    return [(i * length) // n for i in range(n + 1)]


def pyramid_regions(spec: PyramidSpec, width: int, height: int) -> RegionLayout:
    regions = []
    for level in range(spec.level + 1):
        ncols, nrows = spec.regions_at(level)
        if width < ncols or height < nrows:
            raise EncodingError(
                f"{width}x{height} image too small for a {ncols}x{nrows} partition at level {level}"
            )
        xc, yc = _cuts(width, ncols), _cuts(height, nrows)
        for j in range(nrows):
            for i in range(ncols):
                regions.append((xc[i], yc[j], xc[i + 1], yc[j + 1]))
    return RegionLayout(tuple(regions), width, height)


def encode_bovw(keypoints, words, layout: RegionLayout, k: int) -> np.ndarray:
    """Concatenated per-region visual-word count histograms.

    A keypoint belongs to region ``(x0, y0, x1, y1)`` when ``x0 <= x < x1``
    and ``y0 <= y < y1``; the last region on each axis is closed.
    """
    kps = np.asarray(keypoints, dtype=np.float64).reshape(-1, 3)
    words = np.asarray(words, dtype=np.int64).ravel()
    if len(kps) != len(words):
        raise EncodingError(f"{len(kps)} keypoints but {len(words)} words")
    if len(words) and (words.min() < 0 or words.max() >= k):
        raise EncodingError(f"word index out of range for codebook of size {k}")
    x, y = kps[:, 0], kps[:, 1]
    blocks = []
    for x0, y0, x1, y1 in layout.regions:
        inside = ((x >= x0) & ((x < x1) | (x1 == layout.width))
                  & (y >= y0) & ((y < y1) | (y1 == layout.height)))
        blocks.append(np.bincount(words[inside], minlength=k).astype(np.float64))
    return np.concatenate(blocks)


@dataclass
class ScalerStats:
    mean: np.ndarray = field(repr=False)
    std: np.ndarray = field(repr=False)

    def to_json(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "dim": len(self.mean),
                "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> "ScalerStats":
        _check_schema(doc, "scaler")
        return cls(np.asarray(doc["mean"], dtype=np.float64), np.asarray(doc["std"], dtype=np.float64))


def _check_schema(doc, what):
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise EncodingError(f"unsupported {what} schema {doc.get('schema_version')!r}")


def fit_scaler(train_vectors) -> ScalerStats:
    X = np.asarray(train_vectors, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EncodingError("cannot fit a scaler on zero vectors")
    mean = X.mean(axis=0)
    std = np.sqrt(((X - mean) ** 2).mean(axis=0))
    return ScalerStats(mean, std)


def normalize(v, kind: str, stats: ScalerStats | None = None, block_size: int | None = None) -> np.ndarray:
    """Normalize one vector (1-D) or a batch of row vectors (2-D).

    ``l2`` and ``sum`` rescale each ``block_size`` slice independently (one
    slice per pyramid region); without ``block_size`` the whole vector is one
    block. ``standard`` applies ``(x - mean) / std`` per dimension. All-zero
    blocks and zero-variance dimensions map to zero.
    """
    if kind not in NORMALIZATIONS:
        raise EncodingError(f"unknown normalization {kind!r}")
    X = np.array(v, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if kind == "none":
        pass
    elif kind == "standard":
        if stats is None:
            raise EncodingError("standard normalization needs fitted scaler stats")
        if stats.mean.shape[0] != X.shape[1]:
            raise EncodingError(f"scaler fit on dimension {stats.mean.shape[0]}, vector has {X.shape[1]}")
        safe = np.where(stats.std > 0, stats.std, 1.0)
        X = np.where(stats.std > 0, (X - stats.mean) / safe, 0.0)
    else:
        b = block_size or X.shape[1]
        if X.shape[1] % b:
            raise EncodingError(f"vector length {X.shape[1]} is not a multiple of block size {b}")
        B = X.reshape(X.shape[0], -1, b)
        if kind == "l2":
            # scale by the block maximum first so tiny entries do not underflow when squared
            m = np.abs(B).max(axis=2, keepdims=True)
            S = np.divide(B, m, out=np.zeros_like(B), where=m != 0)
            norms = m * np.sqrt((S * S).sum(axis=2, keepdims=True))
        else:
            norms = B.sum(axis=2, keepdims=True)
        B = np.divide(B, norms, out=np.zeros_like(B), where=norms != 0)
        X = B.reshape(X.shape)
    return X[0] if single else X


@dataclass
class PcaModel:
    mean: np.ndarray = field(repr=False)
    components: np.ndarray = field(repr=False)  # (num_components, dim)
    explained_variance: np.ndarray = field(repr=False)

    @property
    def num_components(self) -> int:
        return self.components.shape[0]

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "dim": len(self.mean),
            "num_components": self.num_components,
            "mean": self.mean.tolist(),
            "components": self.components.ravel().tolist(),
            "explained_variance": self.explained_variance.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PcaModel":
        _check_schema(doc, "pca")
        comps = np.asarray(doc["components"], dtype=np.float64).reshape(doc["num_components"], doc["dim"])
        return cls(np.asarray(doc["mean"], dtype=np.float64), comps,
                   np.asarray(doc["explained_variance"], dtype=np.float64))


def fit_pca(train_vectors, num_components: int) -> PcaModel:
    """Principal axes of the centred data (covariance normalized by n - 1).

    Each component is signed so its largest-magnitude entry is positive.
    """
    X = np.asarray(train_vectors, dtype=np.float64)
    n, d = X.shape
    if not 1 <= num_components <= min(d, n - 1):
        raise EncodingError(
            f"num_components={num_components} must lie in [1, min(dim={d}, samples-1={n - 1})]"
        )
    mean = X.mean(axis=0)
    Xc = X - mean
    if d <= n:
        evals, evecs = np.linalg.eigh(Xc.T @ Xc / (n - 1))
        order = np.argsort(evals)[::-1][:num_components]
        comps = evecs[:, order].T
        var = evals[order]
    else:
        _, s, vt = np.linalg.svd(Xc, full_matrices=False)
        comps = vt[:num_components]
        var = s[:num_components] ** 2 / (n - 1)
    var = np.maximum(var, 0.0)
    pivot = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(len(comps)), pivot])
    signs[signs == 0] = 1.0
    return PcaModel(mean, comps * signs[:, None], var)


def project_pca(model: PcaModel, v) -> np.ndarray:
    V = np.asarray(v, dtype=np.float64)
    if V.shape[-1] != model.mean.shape[0]:
        raise EncodingError(f"PCA fit on dimension {model.mean.shape[0]}, vector has {V.shape[-1]}")
    return (V - model.mean) @ model.components.T


def save_model(obj, path):
    Path(path).write_text(json.dumps(obj.to_json(), sort_keys=True))


def export_features_csv(path, X: np.ndarray, labels, class_names=None, tag: str = "bovw"):
    """One row per image: label first, then the feature values."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"{tag}_{i}" for i in range(X.shape[1])])
        for lab, row in zip(labels, X):
            name = class_names[lab] if class_names is not None else lab
            w.writerow([name] + [repr(float(x)) for x in row])
