"""Pipeline configuration: one strict JSON document, unknown keys rejected."""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .classify import KERNELS
from .encoding import NORMALIZATIONS, SHAPES, PyramidSpec
from .fisher import fisher_dim

DESCRIPTOR_DIM = 128
CLASSIFIERS = ("svm", "knn", "logreg")
PROTOCOLS = ("holdout", "cv")
STEPS = ("extract", "train-codebook", "encode", "fit", "evaluate", "cv", "sweep")


class ConfigError(ValueError):
    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}" if field_path else message)
        self.field = field_path


@dataclass
class DatasetConfig:
    root: str = ""
    train_fraction: float = 0.7
    split_seed: int = 0


@dataclass
class FeaturesConfig:
    step: int = 8
    patch: int = 16
    scales: list[float] = field(default_factory=lambda: [1.0])


@dataclass
class CodebookConfig:
    k: int = 512
    max_iter: int = 100
    tol: float = 1e-4
    seed: int = 0
    init: str = "kmeans++"
    subsample: int = 200_000


@dataclass
class EncodingConfig:
    shape: str = "horizontal"
    level: int = 1
    max_level: int = 3
    normalization: str = "standard"


@dataclass
class PcaConfig:
    enabled: bool = False
    num_components: int = 64


@dataclass
class FisherConfig:
    enabled: bool = False
    K: int = 64
    max_iter: int = 100
    tol: float = 1e-6
    seed: int = 0
    include_weight_block: bool = False


@dataclass
class KernelConfig:
    kind: str = "rbf"
    degree: int = 3
    gamma: typing.Union[float, str] = "scale"
    coef0: float = 0.0


@dataclass
class LogRegConfig:
    l2_strength: float = 1e-3
    learning_rate: typing.Optional[float] = None
    max_iter: int = 1000
    tol: float = 1e-5


@dataclass
class ClassifierConfig:
    kind: str = "svm"
    kernel: KernelConfig = field(default_factory=KernelConfig)
    C: float = 1.0
    tol: float = 1e-3
    knn_k: int = 5
    logreg: LogRegConfig = field(default_factory=LogRegConfig)


@dataclass
class EvalConfig:
    protocol: str = "holdout"
    folds: int = 8
    seed: int = 0


@dataclass
class PipelineConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    features: FeaturesConfig = field(default_factory=FeaturesConfig)
    codebook: CodebookConfig = field(default_factory=CodebookConfig)
    encoding: EncodingConfig = field(default_factory=EncodingConfig)
    pca: PcaConfig = field(default_factory=PcaConfig)
    fisher: FisherConfig = field(default_factory=FisherConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    steps: list[str] = field(default_factory=list)
    sweep: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def fingerprint(self, *sections: str) -> str:
        """Content hash of the whole config or of the named sections."""
        d = self.to_dict()
        if sections:
            d = {s: d[s] for s in sections}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    @property
    def pyramid(self) -> PyramidSpec:
        e = self.encoding
        return PyramidSpec(e.shape, e.level, max(e.max_level, e.level))

    @property
    def num_regions(self) -> int:
        return self.pyramid.num_regions

    @property
    def feature_dim(self) -> int:
        """Length of the encoded vector before PCA."""
        if self.fisher.enabled:
            return fisher_dim(self.fisher.K, DESCRIPTOR_DIM, self.fisher.include_weight_block)
        return self.num_regions * self.codebook.k

    @property
    def encoding_tag(self) -> str:
        tag = "fisher" if self.fisher.enabled else "bovw"
        return tag + "+pca" if self.pca.enabled else tag

    def with_overrides(self, overrides: dict) -> "PipelineConfig":
        """Copy with dotted-path overrides such as ``{"codebook.k": 32}``."""
        d = copy.deepcopy(self.to_dict())
        for dotted, value in overrides.items():
            node = d
            parts = dotted.split(".")
            for p in parts[:-1]:
                if not isinstance(node, dict) or p not in node:
                    raise ConfigError(dotted, "unknown configuration path")
                node = node[p]
            if not isinstance(node, dict) or parts[-1] not in node:
                raise ConfigError(dotted, "unknown configuration path")
            node[parts[-1]] = value
        return from_dict(d)


def _check_type(value, tp, path):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        errors = []
        for alt in typing.get_args(tp):
            try:
                return _check_type(value, alt, path)
            except ConfigError as exc:
                errors.append(str(exc))
        raise ConfigError(path, f"value {value!r} has the wrong type")
    if tp is type(None):
        if value is not None:
            raise ConfigError(path, f"expected null, got {value!r}")
        return None
    if origin is list:
        (inner,) = typing.get_args(tp)
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {value!r}")
        return [_check_type(v, inner, f"{path}[{i}]") for i, v in enumerate(value)]
    if origin is dict or tp is dict:
        if not isinstance(value, dict):
            raise ConfigError(path, f"expected an object, got {value!r}")
        return value
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    raise ConfigError(path, f"unsupported field type {tp}")


def _build(cls, data, path=""):
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected an object, got {data!r}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown key")
    kwargs = {}
    for name in names:
        if name in data:
            sub = f"{path}.{name}" if path else name
            kwargs[name] = _check_type(data[name], hints[name], sub)
    return cls(**kwargs)


def from_dict(data: dict) -> PipelineConfig:
    cfg = _build(PipelineConfig, data)
    validate(cfg)
    return cfg


def load_config(path) -> PipelineConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"{path} is not valid JSON: {exc}") from None
    return from_dict(data)


def _require(cond, path, message):
    if not cond:
        raise ConfigError(path, message)


def validate(cfg: PipelineConfig):
    d = cfg.dataset
    _require(0.0 < d.train_fraction < 1.0, "dataset.train_fraction", "must lie in (0, 1)")
    f = cfg.features
    _require(f.step >= 1, "features.step", "must be >= 1")
    _require(f.patch >= 8, "features.patch", "must be >= 8")
    _require(f.scales and all(s > 0 for s in f.scales), "features.scales", "must be non-empty and positive")
    c = cfg.codebook
    _require(c.k >= 1, "codebook.k", "must be >= 1")
    _require(c.max_iter >= 1, "codebook.max_iter", "must be >= 1")
    _require(c.tol >= 0, "codebook.tol", "must be >= 0")
    _require(c.init in ("kmeans++", "random-points"), "codebook.init", "must be 'kmeans++' or 'random-points'")
    _require(c.subsample >= 0, "codebook.subsample", "must be >= 0 (0 disables subsampling)")
    e = cfg.encoding
    _require(e.shape in SHAPES, "encoding.shape", f"must be one of {SHAPES}")
    _require(e.max_level >= 0, "encoding.max_level", "must be >= 0")
    _require(0 <= e.level <= e.max_level, "encoding.level", f"must lie in [0, {e.max_level}]")
    _require(e.normalization in NORMALIZATIONS, "encoding.normalization", f"must be one of {NORMALIZATIONS}")
    fi = cfg.fisher
    _require(fi.K >= 1, "fisher.K", "must be >= 1")
    _require(fi.max_iter >= 1, "fisher.max_iter", "must be >= 1")
    p = cfg.pca
    if p.enabled:
        _require(1 <= p.num_components <= cfg.feature_dim, "pca.num_components",
                 f"must lie in [1, {cfg.feature_dim}] (the encoded feature dimension)")
    k = cfg.classifier
    _require(k.kind in CLASSIFIERS, "classifier.kind", f"must be one of {CLASSIFIERS}")
    _require(k.kernel.kind in KERNELS, "classifier.kernel.kind", f"must be one of {KERNELS}")
    _require(k.kernel.degree >= 1, "classifier.kernel.degree", "must be >= 1")
    g = k.kernel.gamma
    _require(g == "scale" if isinstance(g, str) else g > 0, "classifier.kernel.gamma",
             "must be 'scale' or a positive number")
    _require(k.C > 0, "classifier.C", "must be positive")
    _require(k.knn_k >= 1, "classifier.knn_k", "must be >= 1")
    if k.kind == "svm" and k.kernel.kind == "hist_intersection":
        _require(not fi.enabled and not p.enabled and e.normalization != "standard",
                 "classifier.kernel.kind",
                 "hist_intersection needs non-negative features: use none/l2/sum normalization, no PCA, no Fisher")
    v = cfg.eval
    _require(v.protocol in PROTOCOLS, "eval.protocol", f"must be one of {PROTOCOLS}")
    _require(v.folds >= 2, "eval.folds", "must be >= 2")
    for i, s in enumerate(cfg.steps):
        _require(s in STEPS, f"steps[{i}]", f"must be one of {STEPS}")
