"""Class-per-directory image corpora: scanning, grayscale decoding, stratified splits."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1
IMAGE_EXTENSIONS = (".pgm", ".png", ".jpg", ".jpeg")
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class DatasetError(ValueError):
    pass


class DecodeError(ValueError):
    def __init__(self, path, reason):
        super().__init__(f"cannot decode {path}: {reason}")
        self.path = str(path)


@dataclass(frozen=True)
class ImageRecord:
    path: str
    class_id: int
    class_name: str


@dataclass(frozen=True)
class DatasetIndex:
    """Ordered list of labelled image paths.

    ``classes`` is sorted lexicographically and ``class_id`` indexes into it.
    """

    classes: tuple[str, ...]
    records: tuple[ImageRecord, ...]
    root: str = ""

    def __post_init__(self):
        for r in self.records:
            if not 0 <= r.class_id < len(self.classes):
                raise DatasetError(f"class_id {r.class_id} out of range for {r.path}")

    @property
    def counts(self) -> list[int]:
        out = [0] * len(self.classes)
        for r in self.records:
            out[r.class_id] += 1
        return out

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.class_id for r in self.records], dtype=np.int64)

    def __len__(self):
        return len(self.records)

    def subset(self, positions) -> "DatasetIndex":
        """Index restricted to the given record positions, in the given order."""
        return DatasetIndex(self.classes, tuple(self.records[i] for i in positions), self.root)

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "root": self.root,
            "classes": list(self.classes),
            "counts": self.counts,
            "records": [
                {"path": r.path, "class_id": r.class_id, "class_name": r.class_name}
                for r in self.records
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "DatasetIndex":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise DatasetError(f"unsupported dataset index schema {doc.get('schema_version')!r}")
        records = tuple(
            ImageRecord(r["path"], int(r["class_id"]), r["class_name"]) for r in doc["records"]
        )
        return cls(tuple(doc["classes"]), records, doc.get("root", ""))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "DatasetIndex":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class GrayImage:
    """Luminance image with values in [0, 1], stored as a (height, width) array."""

    pixels: np.ndarray = field(repr=False)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    fold_of: np.ndarray

    def train_test(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        """Record positions outside / inside ``fold``."""
        test = np.flatnonzero(self.fold_of == fold)
        train = np.flatnonzero(self.fold_of != fold)
        return train, test


def scan_dataset(root) -> DatasetIndex:
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} does not exist or is not a directory")
    classes = sorted(
        p.name for p in root.iterdir() if p.is_dir() and not p.name.startswith(".")
    )
    if not classes:
        raise DatasetError(f"no classes found under {root}")
    records = []
    for cid, name in enumerate(classes):
        files = sorted(
            p.name
            for p in (root / name).iterdir()
            if p.is_file() and not p.name.startswith(".")
            and p.suffix.lower() in IMAGE_EXTENSIONS
        )
        records.extend(ImageRecord(str(root / name / f), cid, name) for f in files)
    if not records:
        raise DatasetError(f"no images found under {root}")
    return DatasetIndex(tuple(classes), tuple(records), str(root))


def _read_pnm(data: bytes, path) -> np.ndarray:
    """Parse binary (P5) or ASCII (P2) PGM."""
    magic = data[:2]
    if magic not in (b"P5", b"P2"):
        raise DecodeError(path, "not a PGM file")
    pos = 2
    header = []
    while len(header) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DecodeError(path, "truncated PGM header")
        try:
            header.append(int(data[start:pos]))
        except ValueError:
            raise DecodeError(path, "malformed PGM header") from None
    width, height, maxval = header
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise DecodeError(path, "invalid PGM dimensions")
    n = width * height
    if magic == b"P5":
        pos += 1  # single whitespace after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
        raw = data[pos:pos + n * dtype.itemsize]
        if len(raw) < n * dtype.itemsize:
            raise DecodeError(path, "truncated PGM raster")
        values = np.frombuffer(raw, dtype=dtype).astype(np.float64)
    else:
        tokens = data[pos:].split()
        if len(tokens) < n:
            raise DecodeError(path, "truncated PGM raster")
        values = np.array([int(t) for t in tokens[:n]], dtype=np.float64)
    return np.clip(values / maxval, 0.0, 1.0).reshape(height, width)


def _read_with_pillow(path) -> np.ndarray:
    from PIL import Image

    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=np.float64)
                return np.clip(arr / 65535.0, 0.0, 1.0)
            if im.mode == "L":
                return np.asarray(im, dtype=np.float64) / 255.0
            if im.mode not in ("RGB", "RGBA"):
                im = im.convert("RGB")
            rgb = np.asarray(im, dtype=np.float64)[..., :3] / 255.0
    except (OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(path, str(exc)) from None
    return rgb_to_luminance(rgb)


def rgb_to_luminance(rgb: np.ndarray) -> np.ndarray:
    r, g, b = LUMA_WEIGHTS
    return np.clip(rgb[..., 0] * r + rgb[..., 1] * g + rgb[..., 2] * b, 0.0, 1.0)


def load_grayscale(path) -> GrayImage:
    """Decode PGM, PNG or JPEG to a luminance image in [0, 1]."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DecodeError(path, exc.strerror or str(exc)) from None
    if not data:
        raise DecodeError(path, "empty file")
    if data[:2] in (b"P5", b"P2"):
        pixels = _read_pnm(data, path)
    else:
        pixels = _read_with_pillow(path)
    return GrayImage(np.ascontiguousarray(pixels))


def write_pgm(path, pixels: np.ndarray):
    """Write a [0, 1] float image as 8-bit binary PGM."""
    arr = np.clip(np.rint(np.asarray(pixels) * 255.0), 0, 255).astype(np.uint8)
    h, w = arr.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + arr.tobytes())


def _class_positions(labels: np.ndarray, num_classes: int):
    return [np.flatnonzero(labels == c) for c in range(num_classes)]


def stratified_split(index: DatasetIndex, train_fraction: float, seed: int):
    """Per-class seeded shuffle; the first ``floor(n * fraction)`` of each class train."""
    if not 0.0 < train_fraction < 1.0:
        raise DatasetError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for cid, pos in enumerate(_class_positions(index.labels, len(index.classes))):
        if len(pos) < 2:
            raise DatasetError(
                f"class {index.classes[cid]!r} has {len(pos)} sample(s); cannot stratify"
            )
        perm = pos[rng.permutation(len(pos))]
        n_train = int(np.floor(len(pos) * train_fraction))
        train.extend(perm[:n_train].tolist())
        test.extend(perm[n_train:].tolist())
    train.sort()
    test.sort()
    return index.subset(train), index.subset(test)


def stratified_fold_labels(labels, k: int, seed: int, class_names=None) -> FoldAssignment:
    labels = np.asarray(labels, dtype=np.int64)
    if k < 2:
        raise DatasetError(f"need at least 2 folds, got {k}")
    num_classes = int(labels.max()) + 1 if len(labels) else 0
    rng = np.random.default_rng(seed)
    fold_of = np.full(len(labels), -1, dtype=np.int64)
    offset = 0
    for cid, pos in enumerate(_class_positions(labels, num_classes)):
        if len(pos) == 0:
            continue
        if len(pos) < k:
            name = class_names[cid] if class_names else cid
            raise DatasetError(f"class {name!r} has {len(pos)} samples, fewer than k={k} folds")
        perm = pos[rng.permutation(len(pos))]
        # round-robin continues across classes so fold totals stay balanced too
        fold_of[perm] = (offset + np.arange(len(perm))) % k
        offset = (offset + len(perm)) % k
    return FoldAssignment(k, fold_of)


def stratified_folds(index: DatasetIndex, k: int, seed: int) -> FoldAssignment:
    return stratified_fold_labels(index.labels, k, seed, index.classes)


def class_balance_report(train: DatasetIndex, test: DatasetIndex) -> str:
    """Plain-text per-class sample counts for the train and test parts."""
    width = max(len(c) for c in train.classes)
    lines = [f"{'class':<{width}}  train   test"]
    for name, a, b in zip(train.classes, train.counts, test.counts):
        lines.append(f"{name:<{width}}  {a:5d}  {b:5d}")
    lines.append(f"{'total':<{width}}  {len(train):5d}  {len(test):5d}")
    return "\n".join(lines)
