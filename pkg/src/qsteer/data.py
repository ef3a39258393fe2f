"""IDX dataset ingestion and desk-scale preprocessing.

Datasets live under ``<data_dir>/<name>/`` with the standard file names
(``train-images-idx3-ubyte`` etc., optionally gzipped). ``data_dir`` defaults
to ``$QSTEER_DATA_DIR`` or ``~/.cache/qsteer``.
"""

from __future__ import annotations

import gzip
import hashlib
import json
import logging
import os
import shutil
import struct
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

SPLIT_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}

# Base URLs of the public mirrors; the decompressed sizes are fixed by the
# IDX headers (16 + n*784 bytes for images, 8 + n bytes for labels).
SOURCES = {
    "mnist": "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "fashion_mnist": "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/",
    "kmnist": "http://codh.rois.ac.jp/kmnist/dataset/kmnist/",
}
EXPECTED_BYTES = {
    "train-images-idx3-ubyte": 16 + 60000 * 784,
    "train-labels-idx1-ubyte": 8 + 60000,
    "t10k-images-idx3-ubyte": 16 + 10000 * 784,
    "t10k-labels-idx1-ubyte": 8 + 10000,
}
DATASETS = ("mnist", "fashion_mnist", "kmnist", "mnist5k")


class DataError(Exception):
    pass


@dataclass
class ImageSet:
    images: np.ndarray
    labels: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise DataError("pixels must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, idx, **prov) -> "ImageSet":
        idx = np.asarray(idx, dtype=int)
        return ImageSet(self.images[idx], self.labels[idx], {**self.provenance, **prov})

    def checksum(self) -> str:
        h = hashlib.sha256(np.ascontiguousarray(self.images).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        return h.hexdigest()[:16]

    def write_provenance(self, path) -> None:
        body = {**self.provenance, "count": len(self), "checksum": self.checksum()}
        Path(path).write_text(json.dumps(body, indent=1, sort_keys=True))


def default_data_dir() -> Path:
    return Path(os.environ.get("QSTEER_DATA_DIR", Path.home() / ".cache" / "qsteer"))


# ---------------------------------------------------------------------------
# IDX container


def _read_bytes(path) -> bytes:
    path = Path(path)
    if not path.exists() and Path(str(path) + ".gz").exists():
        path = Path(str(path) + ".gz")
    if not path.exists():
        raise DataError(f"missing file: {path}")
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, magic: int, path) -> np.ndarray:
    if len(raw) < 8:
        raise DataError(f"{path}: truncated header")
    got = struct.unpack(">I", raw[:4])[0]
    if got != magic:
        raise DataError(f"{path}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    ndim = raw[3]
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataError(f"{path}: truncated header")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise DataError(f"{path}: truncated payload ({len(raw) - header} of {size} bytes)")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_path, labels_path, name: str = "", split: str = "") -> ImageSet:
    imgs = _parse_idx(_read_bytes(images_path), IMAGES_MAGIC, images_path)
    labs = _parse_idx(_read_bytes(labels_path), LABELS_MAGIC, labels_path)
    if imgs.shape[0] != labs.shape[0]:
        raise DataError(f"count mismatch: {imgs.shape[0]} images vs {labs.shape[0]} labels")
    return ImageSet(imgs.astype(float) / 255.0, labs.astype(int), {"dataset": name, "split": split})


def write_idx(images_u8: np.ndarray, labels, images_path, labels_path) -> None:
    images_u8 = np.asarray(images_u8, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, h, w = images_u8.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGES_MAGIC, n, h, w))
        f.write(images_u8.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", LABELS_MAGIC, len(labels)))
        f.write(labels.tobytes())


def load_dataset(name: str, split: str, data_dir=None) -> ImageSet:
    if split not in SPLIT_FILES:
        raise DataError(f"unknown split {split!r}")
    root = Path(data_dir) if data_dir is not None else default_data_dir()
    img_f, lab_f = SPLIT_FILES[split]
    return load_idx(root / name / img_f, root / name / lab_f, name=name, split=split)


# ---------------------------------------------------------------------------
# preprocessing


def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    """Row i holds the overlap of output cell i with each input pixel, normalized to sum 1."""
    scale = n_in / n_out
    W = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo, hi = i * scale, (i + 1) * scale
        for j in range(int(np.floor(lo)), min(n_in, int(np.ceil(hi)))):
            W[i, j] = max(0.0, min(hi, j + 1) - max(lo, j))
    return W / scale


_W28_16 = _area_weights(28, 16)


def downscale_16(image) -> np.ndarray:
    """Area-averaged 28x28 -> 16x16 resampling (works on stacks too)."""
    x = np.asarray(image, dtype=float)
    if x.shape[-2:] != (28, 28):
        raise DataError(f"expected 28x28 input, got {x.shape[-2:]}")
    out = np.einsum("ia,...ab,jb->...ij", _W28_16, x, _W28_16)
    return np.clip(out, 0.0, 1.0)


def downscale_set(s: ImageSet) -> ImageSet:
    return ImageSet(downscale_16(s.images), s.labels, {**s.provenance, "downscale": "area-16x16"})


def filter_binary(s: ImageSet, classes=(0, 1)) -> ImageSet:
    a, b = classes
    if a == b:
        raise DataError("binary filter needs two distinct classes")
    for c in (a, b):
        if not np.any(s.labels == c):
            raise DataError(f"class {c} absent from the set")
    idx = np.flatnonzero((s.labels == a) | (s.labels == b))
    out = s.take(idx, classes=[int(a), int(b)])
    out.labels = (out.labels == b).astype(int)
    return out


def _allocate(counts: np.ndarray, n: int) -> np.ndarray:
    total = counts.sum()
    exact = counts * n / total
    alloc = np.floor(exact).astype(int)
    rem = n - alloc.sum()
    order = np.argsort(-(exact - alloc), kind="stable")
    alloc[order[:rem]] += 1
    return alloc


def subsample(s: ImageSet, n: int, seed: int, return_rest: bool = False):
    """Seeded class-stratified sample without replacement; original order kept."""
    if n > len(s):
        raise DataError(f"cannot draw {n} samples from a set of {len(s)}")
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(s.labels, return_counts=True)
    alloc = _allocate(counts, n)
    chosen = []
    for c, k in zip(classes, alloc):
        members = np.flatnonzero(s.labels == c)
        chosen.append(rng.choice(members, size=k, replace=False))
    idx = np.sort(np.concatenate(chosen)) if chosen else np.array([], dtype=int)
    sub = s.take(idx, subsample={"n": int(n), "seed": int(seed)})
    if not return_rest:
        return sub
    rest = np.setdiff1d(np.arange(len(s)), idx)
    return sub, s.take(rest, subsample_rest={"n": int(len(rest)), "seed": int(seed)})


# ---------------------------------------------------------------------------
# fetching


def fetch_dataset(name: str, data_dir=None, base_url: str | None = None) -> Path:
    """Download the four IDX files of ``name`` and verify their decompressed sizes."""
    if name == "mnist5k":
        return export_mnist5k(data_dir)
    if name not in SOURCES:
        raise DataError(f"no source known for dataset {name!r}")
    base = base_url or SOURCES[name]
    dest = (Path(data_dir) if data_dir is not None else default_data_dir()) / name
    dest.mkdir(parents=True, exist_ok=True)
    for fname, size in EXPECTED_BYTES.items():
        target = dest / fname
        if target.exists() and target.stat().st_size == size:
            continue
        url = base + fname + ".gz"
        log.info("fetching %s", url)
        try:
            with urllib.request.urlopen(url) as r:
                raw = r.read()
        except OSError as exc:
            raise DataError(f"download failed for {url}: {exc}") from exc
        raw = gzip.decompress(raw) if raw[:2] == b"\x1f\x8b" else raw
        if len(raw) != size:
            raise DataError(f"{fname}: got {len(raw)} bytes, expected {size}")
        target.write_bytes(raw)
    return dest


def export_mnist5k(data_dir=None, seed: int = 0, test_per_class: int = 100) -> Path:
    """Write the 5000-image MNIST sample shipped with ``mlxtend`` as IDX files.

    The sample (500 images per digit) is split per class into train/test with
    ``test_per_class`` images held out.
    """
    import importlib.resources

    try:
        src = importlib.resources.files("mlxtend") / "data" / "data" / "mnist_5k.csv.gz"
    except ModuleNotFoundError as exc:
        raise DataError("mnist5k needs the 'mlxtend' package (pip install --no-deps mlxtend)") from exc
    with src.open("rb") as fh:
        table = np.loadtxt(gzip.open(fh), delimiter=",", dtype=np.int64)
    images = table[:, :-1].reshape(-1, 28, 28).astype(np.uint8)
    labels = table[:, -1].astype(np.uint8)
    rng = np.random.default_rng(seed)
    test_idx = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        test_idx.append(rng.choice(members, size=test_per_class, replace=False))
    test_idx = np.sort(np.concatenate(test_idx))
    train_idx = np.setdiff1d(np.arange(len(labels)), test_idx)
    dest = (Path(data_dir) if data_dir is not None else default_data_dir()) / "mnist5k"
    tmp = dest.with_name(dest.name + ".tmp")
    tmp.mkdir(parents=True, exist_ok=True)
    for split, idx in (("train", train_idx), ("test", test_idx)):
        img_f, lab_f = SPLIT_FILES[split]
        write_idx(images[idx], labels[idx], tmp / img_f, tmp / lab_f)
    (tmp / "provenance.json").write_text(
        json.dumps({"source": "mlxtend mnist_5k sample of MNIST", "split_seed": seed,
                    "test_per_class": test_per_class}, indent=1)
    )
    if dest.exists():
        shutil.rmtree(dest)
    tmp.rename(dest)
    return dest


def available_datasets(data_dir=None) -> list:
    root = Path(data_dir) if data_dir is not None else default_data_dir()
    out = []
    for name in DATASETS:
        files = [root / name / f for pair in SPLIT_FILES.values() for f in pair]
        if all(f.exists() or Path(str(f) + ".gz").exists() for f in files):
            out.append(name)
    return out
