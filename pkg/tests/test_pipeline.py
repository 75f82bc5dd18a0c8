import numpy as np

from pyrabow.config import from_dict
from pyrabow.dataset import scan_dataset, stratified_split
from pyrabow.pipeline import ArtifactCache, FittedPipeline, fit_pipeline, load_descriptors


def _fit(root, extra, cache=None):
    cfg = from_dict({"dataset": {"root": str(root)}, "codebook": {"k": 16, "max_iter": 30}, **extra})
    index = scan_dataset(root)
    desc = load_descriptors(index, cfg)
    train, _ = stratified_split(index, 0.7, 0)
    pos = [i for i, r in enumerate(index.records) if r in set(train.records)]
    fitted = fit_pipeline(cfg, [desc[i] for i in pos], index.labels[pos], index.classes,
                          cache=cache, train_key=("t", pos) if cache else None)
    return fitted, desc, index


def test_variants_fit_and_roundtrip(small_corpus, tmp_path):
    variants = [
        {},
        {"encoding": {"normalization": "l2", "level": 2, "shape": "square"}},
        {"classifier": {"kind": "knn", "knn_k": 1}},
        {"classifier": {"kind": "logreg"}, "pca": {"enabled": True, "num_components": 8}},
        {"fisher": {"enabled": True, "K": 2, "max_iter": 10}},
        {"encoding": {"normalization": "sum"}, "classifier": {"kernel": {"kind": "hist_intersection"}}},
    ]
    for i, extra in enumerate(variants):
        fitted, desc, index = _fit(small_corpus, extra)
        pred, scores = fitted.predict(desc)
        assert scores.shape == (len(index), 3)
        fitted.save(tmp_path / str(i))
        back = FittedPipeline.load(tmp_path / str(i))
        pred2, scores2 = back.predict(desc)
        np.testing.assert_array_equal(pred, pred2)
        np.testing.assert_allclose(scores, scores2, atol=1e-10)


def test_artifact_cache_reuses_codebook(small_corpus):
    cache = ArtifactCache()
    _fit(small_corpus, {}, cache)
    _fit(small_corpus, {"classifier": {"C": 5.0}}, cache)
    assert cache.hits == 1 and cache.misses == 1


def test_descriptor_disk_cache(small_corpus, tmp_path):
    cfg = from_dict({"dataset": {"root": str(small_corpus)}})
    index = scan_dataset(small_corpus)
    a = load_descriptors(index, cfg, cache_dir=tmp_path)
    assert len(list(tmp_path.glob("*.bvwd"))) == 1
    b = load_descriptors(index, cfg, cache_dir=tmp_path)
    for x, y in zip(a, b):
        assert x.descriptors.tobytes() == y.descriptors.tobytes()
