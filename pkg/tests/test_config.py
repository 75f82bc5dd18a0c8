import json

import pytest

from pyrabow.config import ConfigError, PipelineConfig, from_dict, load_config


def test_defaults_are_the_preset():
    cfg = PipelineConfig()
    assert cfg.encoding.shape == "horizontal" and cfg.encoding.level == 1
    assert cfg.encoding.normalization == "standard"
    assert cfg.classifier.kind == "svm" and cfg.classifier.kernel.kind == "rbf"
    assert cfg.num_regions == 4 and cfg.feature_dim == 4 * 512
    assert cfg.encoding_tag == "bovw"


@pytest.mark.parametrize("doc, field", [
    ({"codebook": {"kk": 3}}, "codebook.kk"),
    ({"codebook": {"k": "many"}}, "codebook.k"),
    ({"codebook": {"k": True}}, "codebook.k"),
    ({"features": {"scales": [1.0, "x"]}}, "features.scales[1]"),
    ({"encoding": {"shape": "circle"}}, "encoding.shape"),
    ({"encoding": {"level": 4}}, "encoding.level"),
    ({"pca": {"enabled": True, "num_components": 5000}}, "pca.num_components"),
    ({"classifier": {"kernel": {"kind": "hist_intersection"}}}, "classifier.kernel.kind"),
    ({"classifier": {"kernel": {"gamma": "auto"}}}, "classifier.kernel.gamma"),
    ({"eval": {"folds": 1}}, "eval.folds"),
    ({"steps": ["extract", "dance"]}, "steps[1]"),
    ({"bogus": {}}, "bogus"),
])
def test_errors_name_the_field(doc, field):
    with pytest.raises(ConfigError) as ei:
        from_dict(doc)
    assert ei.value.field == field
    assert field in str(ei.value)


def test_level3_horizontal_valid():
    cfg = from_dict({"encoding": {"level": 3}, "codebook": {"k": 8}})
    assert cfg.num_regions == 19 and cfg.feature_dim == 19 * 8


def test_fisher_dims_and_tag():
    cfg = from_dict({"fisher": {"enabled": True, "K": 4}, "pca": {"enabled": True, "num_components": 16}})
    assert cfg.feature_dim == 2 * 4 * 128
    assert cfg.encoding_tag == "fisher+pca"


def test_overrides_and_fingerprint():
    base = PipelineConfig()
    cfg = base.with_overrides({"codebook.k": 32, "classifier.kernel.kind": "linear"})
    assert cfg.codebook.k == 32 and cfg.classifier.kernel.kind == "linear"
    assert cfg.fingerprint() != base.fingerprint()
    assert cfg.fingerprint("features") == base.fingerprint("features")
    with pytest.raises(ConfigError):
        base.with_overrides({"codebook.size": 3})


def test_load_config_roundtrip(tmp_path):
    p = tmp_path / "c.json"
    cfg = from_dict({"codebook": {"k": 64}, "classifier": {"logreg": {"learning_rate": 0.1}}})
    p.write_text(json.dumps(cfg.to_dict()))
    assert load_config(p) == cfg
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)
