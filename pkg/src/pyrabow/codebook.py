"""Visual-word codebooks: k-means clustering and nearest-centroid quantization."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1

log = logging.getLogger(__name__)


class CodebookError(ValueError):
    pass


@dataclass(frozen=True)
class KMeansConfig:
    k: int = 512
    max_iter: int = 100
    tol: float = 1e-4
    seed: int = 0
    init: str = "kmeans++"

    def __post_init__(self):
        if self.k < 1:
            raise CodebookError(f"k must be >= 1, got {self.k}")
        if self.max_iter < 1:
            raise CodebookError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.tol < 0:
            raise CodebookError(f"tol must be >= 0, got {self.tol}")
        if self.init not in ("kmeans++", "random-points"):
            raise CodebookError(f"unknown init {self.init!r}")


@dataclass
class Codebook:
    centroids: np.ndarray = field(repr=False)
    objective: float = 0.0
    history: list[float] = field(default_factory=list, repr=False)
    config: KMeansConfig | None = None

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "k": self.k,
            "dim": self.dim,
            "centroids": self.centroids.ravel().tolist(),
            "objective": self.objective,
            "config": asdict(self.config) if self.config else None,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Codebook":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise CodebookError(f"unsupported codebook schema {doc.get('schema_version')!r}")
        c = np.asarray(doc["centroids"], dtype=np.float64).reshape(doc["k"], doc["dim"])
        cfg = KMeansConfig(**doc["config"]) if doc.get("config") else None
        return cls(c, float(doc["objective"]), config=cfg)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "Codebook":
        return cls.from_json(json.loads(Path(path).read_text()))


def nearest_centroids(X: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Index of the nearest centroid for each row; ties go to the lowest index.

    Distances are computed with the expanded form for speed; rows whose two
    best candidates are too close to call are recomputed exactly.
    """
    X = np.asarray(X, dtype=np.float64)
    C = np.asarray(centroids, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != C.shape[1]:
        raise CodebookError(f"descriptor dimension {X.shape[-1]} does not match codebook {C.shape[1]}")
    n = X.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    if C.shape[0] == 1:
        return np.zeros(n, dtype=np.int64)
    xx = np.einsum("ij,ij->i", X, X)
    cc = np.einsum("ij,ij->i", C, C)
    out = np.empty(n, dtype=np.int64)
    chunk = max(1, 2_000_000 // max(1, C.shape[0]))
    for s in range(0, n, chunk):
        Xs = X[s:s + chunk]
        d2 = xx[s:s + chunk, None] - 2.0 * (Xs @ C.T) + cc[None, :]
        two = np.partition(d2, 1, axis=1)[:, :2]
        best = np.argmin(d2, axis=1)
        scale = xx[s:s + chunk] + cc.max() + 1e-300
        close = np.flatnonzero(two[:, 1] - two[:, 0] <= 1e-9 * scale)
        for r in close:
            exact = ((Xs[r][None, :] - C) ** 2).sum(axis=1)
            best[r] = int(np.argmin(exact))
        out[s:s + chunk] = best
    return out


def _objective(X, C, labels) -> float:
    diff = X - C[labels]
    return float(np.einsum("ij,ij->", diff, diff))


def _kmeans_pp(X, k, rng) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    first = int(rng.integers(n))
    centers[0] = X[first]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            # all remaining points coincide with chosen centres
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[c] = X[idx]
        np.minimum(d2, ((X - centers[c]) ** 2).sum(axis=1), out=d2)
    return centers


def _update_centroids(X, labels, old):
    k = old.shape[0]
    counts = np.bincount(labels, minlength=k)
    order = np.argsort(labels, kind="stable")
    sums = np.zeros_like(old)
    nonempty = np.flatnonzero(counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])[nonempty]
    sums[nonempty] = np.add.reduceat(X[order], starts, axis=0)
    new = old.copy()
    new[nonempty] = sums[nonempty] / counts[nonempty, None]
    empty = np.flatnonzero(counts == 0)
    if len(empty):
        # re-seed each empty cluster at the point farthest from its centroid
        dist = ((X - old[labels]) ** 2).sum(axis=1)
        farthest = np.argsort(-dist, kind="stable")[:len(empty)]
        new[empty] = X[farthest]
    return new


def train_codebook(descriptors, cfg: KMeansConfig) -> Codebook:
    """Lloyd iterations from k-means++ (or random-point) seeds.

    Stops when the relative objective improvement falls below ``cfg.tol``
    or after ``cfg.max_iter`` iterations. The objective is checked to be
    non-increasing at every iteration.
    """
    X = np.asarray(descriptors, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise CodebookError("cannot train a codebook on zero descriptors")
    if X.shape[0] < cfg.k:
        raise CodebookError(f"need at least k={cfg.k} descriptors, got {X.shape[0]}")
    rng = np.random.default_rng(cfg.seed)
    if cfg.init == "kmeans++":
        C = _kmeans_pp(X, cfg.k, rng)
    else:
        C = X[np.sort(rng.choice(X.shape[0], cfg.k, replace=False))].copy()

    labels = nearest_centroids(X, C)
    obj = _objective(X, C, labels)
    history = [obj]
    for it in range(cfg.max_iter):
        C = _update_centroids(X, labels, C)
        labels = nearest_centroids(X, C)
        new_obj = _objective(X, C, labels)
        if new_obj > obj * (1.0 + 1e-12) + 1e-12:
            raise AssertionError(f"k-means objective increased at iteration {it}: {obj} -> {new_obj}")
        history.append(new_obj)
        improvement = (obj - new_obj) / obj if obj > 0 else 0.0
        obj = new_obj
        if obj == 0.0 or improvement < cfg.tol:
            break
    log.debug("k-means k=%d finished after %d iterations, objective %.6g", cfg.k, len(history) - 1, obj)
    return Codebook(C, obj, history, cfg)


def subsample(descriptors: np.ndarray, budget: int, seed: int) -> np.ndarray:
    """Seeded uniform subsample of at most ``budget`` rows, original order kept."""
    n = len(descriptors)
    if budget <= 0 or n <= budget:
        return descriptors
    rng = np.random.default_rng(seed)
    return descriptors[np.sort(rng.choice(n, budget, replace=False))]


def assign(cb: Codebook, d) -> int:
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 1 or d.shape[0] != cb.dim:
        raise CodebookError(f"descriptor dimension {d.shape[-1] if d.ndim else 0} does not match codebook {cb.dim}")
    dist = ((cb.centroids - d[None, :]) ** 2).sum(axis=1)
    return int(np.argmin(dist))


def quantize_image(cb: Codebook, descs) -> np.ndarray:
    descs = np.asarray(descs, dtype=np.float64)
    if descs.size == 0:
        return np.zeros(0, dtype=np.int64)
    return nearest_centroids(descs, cb.centroids)
