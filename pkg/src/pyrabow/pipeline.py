"""Fitting and applying the full descriptor -> feature -> classifier chain."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import classify
from .codebook import Codebook, KMeansConfig, quantize_image, subsample, train_codebook
from .config import PipelineConfig, from_dict
from .dataset import DatasetIndex
from .encoding import (
    PcaModel,
    ScalerStats,
    encode_bovw,
    fit_pca,
    fit_scaler,
    normalize,
    project_pca,
    pyramid_regions,
)
from .features import (
    DenseGridSpec,
    ImageDescriptors,
    extract_paths,
    read_descriptor_cache,
    write_descriptor_cache,
)
from .fisher import GmmModel, fisher_dim, fisher_encode, train_gmm

log = logging.getLogger(__name__)

PIPELINE_SCHEMA = 1


def grid_spec(cfg: PipelineConfig) -> DenseGridSpec:
    f = cfg.features
    return DenseGridSpec(f.step, f.patch, tuple(f.scales))


def _hash(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(json.dumps(p, sort_keys=True, default=str).encode())
    return h.hexdigest()[:16]


class ArtifactCache:
    """In-memory memo of fitted artifacts keyed by content hash."""

    def __init__(self):
        self._store = {}
        self.hits = 0
        self.misses = 0

    def get(self, key, build):
        if key in self._store:
            self.hits += 1
            return self._store[key]
        self.misses += 1
        value = build()
        self._store[key] = value
        return value


def descriptor_cache_path(cache_dir, cfg: PipelineConfig, index: DatasetIndex) -> Path:
    key = _hash(cfg.to_dict()["features"], [r.path for r in index.records])
    return Path(cache_dir) / f"descriptors-{key}.bvwd"


def load_descriptors(index: DatasetIndex, cfg: PipelineConfig, cache_dir=None,
                     threads: int = 1) -> list[ImageDescriptors]:
    """Descriptors for every record, read from or written to the binary cache."""
    spec = grid_spec(cfg)
    path = descriptor_cache_path(cache_dir, cfg, index) if cache_dir else None
    if path is not None and path.exists() and Path(str(path) + ".json").exists():
        cached = read_descriptor_cache(path)
        if len(cached) == len(index):
            log.info("descriptor cache hit: %s", path)
            return [cached[i] for i in range(len(index))]
    out = extract_paths([r.path for r in index.records], spec, threads)
    if path is not None:
        write_descriptor_cache(path, list(enumerate(out)), spec)
    return out


@dataclass
class FittedPipeline:
    config: PipelineConfig
    classes: list[str]
    classifier: object
    codebook: Codebook | None = None
    gmm: GmmModel | None = None
    scaler: ScalerStats | None = None
    pca: PcaModel | None = None

    def encode(self, images: Sequence[ImageDescriptors]) -> np.ndarray:
        return encode_images(self.config, images, self.codebook, self.gmm, self.scaler, self.pca)

    def predict(self, images: Sequence[ImageDescriptors]):
        """Labels and per-class scores in class-list order.

        Classes the classifier never saw score ``-inf`` (SVM) or 0 (votes).
        """
        X = self.encode(images)
        labels, scores = classify.predict(self.classifier, X)
        scores = np.atleast_2d(scores)
        nc = len(self.classes)
        if isinstance(self.classifier, classify.SvmModel) and scores.shape[1] < nc:
            full = np.full((len(scores), nc), -np.inf)
            full[:, self.classifier.classes] = scores
            scores = full
        elif scores.shape[1] < nc:
            scores = np.hstack([scores, np.zeros((len(scores), nc - scores.shape[1]))])
        return np.atleast_1d(np.asarray(labels, dtype=np.int64)), scores

    def save(self, model_dir):
        d = Path(model_dir)
        d.mkdir(parents=True, exist_ok=True)
        files = {"classifier": "classifier.json"}
        classify.save_classifier(self.classifier, d / "classifier.json")
        for name in ("codebook", "gmm", "scaler", "pca"):
            obj = getattr(self, name)
            if obj is not None:
                (d / f"{name}.json").write_text(json.dumps(obj.to_json(), sort_keys=True))
                files[name] = f"{name}.json"
        meta = {"schema_version": PIPELINE_SCHEMA, "config": self.config.to_dict(),
                "classes": list(self.classes), "files": files}
        (d / "pipeline.json").write_text(json.dumps(meta, indent=1, sort_keys=True))

    @classmethod
    def load(cls, model_dir) -> "FittedPipeline":
        d = Path(model_dir)
        meta = json.loads((d / "pipeline.json").read_text())
        if meta.get("schema_version") != PIPELINE_SCHEMA:
            raise ValueError(f"unsupported pipeline schema {meta.get('schema_version')!r}")
        files = meta["files"]

        def read(name):
            return json.loads((d / files[name]).read_text()) if name in files else None

        cb, gm, sc, pc = read("codebook"), read("gmm"), read("scaler"), read("pca")
        return cls(
            config=from_dict(meta["config"]),
            classes=list(meta["classes"]),
            classifier=classify.classifier_from_json(read("classifier")),
            codebook=Codebook.from_json(cb) if cb else None,
            gmm=GmmModel.from_json(gm) if gm else None,
            scaler=ScalerStats.from_json(sc) if sc else None,
            pca=PcaModel.from_json(pc) if pc else None,
        )


def pooled_descriptors(cfg: PipelineConfig, images: Sequence[ImageDescriptors], seed: int) -> np.ndarray:
    pool = [im.descriptors for im in images if len(im)]
    if not pool:
        raise ValueError("training images produced no descriptors; images smaller than the patch?")
    return subsample(np.vstack(pool), cfg.codebook.subsample, seed)


def fit_codebook(cfg: PipelineConfig, images: Sequence[ImageDescriptors]) -> Codebook:
    c = cfg.codebook
    kcfg = KMeansConfig(k=c.k, max_iter=c.max_iter, tol=c.tol, seed=c.seed, init=c.init)
    return train_codebook(pooled_descriptors(cfg, images, c.seed), kcfg)


def fit_gmm(cfg: PipelineConfig, images: Sequence[ImageDescriptors]) -> GmmModel:
    f = cfg.fisher
    return train_gmm(pooled_descriptors(cfg, images, f.seed), f.K, f.max_iter, f.tol, f.seed)


def raw_features(cfg: PipelineConfig, images, codebook=None, gmm=None) -> np.ndarray:
    """Per-image histograms (or Fisher vectors) before scaling and PCA."""
    rows = []
    if cfg.fisher.enabled:
        dim = fisher_dim(gmm.K, gmm.dim, cfg.fisher.include_weight_block)
        for im in images:
            if len(im) == 0:
                rows.append(np.zeros(dim))
            else:
                rows.append(fisher_encode(gmm, im.descriptors, cfg.fisher.include_weight_block))
    else:
        spec = cfg.pyramid
        for im in images:
            layout = pyramid_regions(spec, im.width, im.height)
            words = quantize_image(codebook, im.descriptors)
            rows.append(encode_bovw(im.keypoints, words, layout, codebook.k))
    return np.vstack(rows) if rows else np.zeros((0, cfg.feature_dim))


def _block_normalize(cfg: PipelineConfig, X: np.ndarray) -> np.ndarray:
    kind = cfg.encoding.normalization
    if cfg.fisher.enabled or kind in ("none", "standard"):
        return X
    return normalize(X, kind, block_size=cfg.codebook.k)


def encode_images(cfg, images, codebook=None, gmm=None, scaler=None, pca=None) -> np.ndarray:
    X = _block_normalize(cfg, raw_features(cfg, images, codebook, gmm))
    if scaler is not None:
        X = normalize(X, "standard", scaler)
    if pca is not None:
        X = project_pca(pca, X)
    return X


def build_classifier(cfg: PipelineConfig, X, y, num_classes: int):
    k = cfg.classifier
    if k.kind == "svm":
        kernel = classify.KernelSpec(k.kernel.kind, k.kernel.degree, k.kernel.gamma, k.kernel.coef0)
        return classify.train_svm(X, y, kernel, k.C, tol=k.tol)
    if k.kind == "knn":
        return classify.train_knn(X, y, min(k.knn_k, len(X)))
    lr = k.logreg
    return classify.train_logreg(X, y, lr.l2_strength, lr.learning_rate, lr.max_iter, lr.tol,
                                 num_classes=num_classes)


def fit_pipeline(cfg: PipelineConfig, images: Sequence[ImageDescriptors], labels, classes,
                 cache: ArtifactCache | None = None, train_key=None) -> FittedPipeline:
    """Fit every stage on the given (training) images only.

    ``train_key`` identifies the training subset for artifact caching; when
    omitted, nothing is cached.
    """
    labels = np.asarray(labels, dtype=np.int64)
    cache = cache if (cache is not None and train_key is not None) else None

    def cached(kind, sections, build):
        if cache is None:
            return build()
        sub = {s: cfg.to_dict()[s] for s in sections}
        return cache.get(_hash(kind, sub, train_key), build)

    codebook = gmm = scaler = pca = None
    if cfg.fisher.enabled:
        gmm = cached("gmm", ("features", "codebook", "fisher"), lambda: fit_gmm(cfg, images))
    else:
        codebook = cached("codebook", ("features", "codebook"), lambda: fit_codebook(cfg, images))
    X = _block_normalize(cfg, raw_features(cfg, images, codebook, gmm))
    if not cfg.fisher.enabled and cfg.encoding.normalization == "standard":
        scaler = fit_scaler(X)
        X = normalize(X, "standard", scaler)
    if cfg.pca.enabled:
        pca = fit_pca(X, cfg.pca.num_components)
        X = project_pca(pca, X)
    clf = build_classifier(cfg, X, labels, len(classes))
    return FittedPipeline(cfg, list(classes), clf, codebook, gmm, scaler, pca)
