"""Dataset ingestion and synthesis.

* MNIST in IDX binary format (optionally gzipped)
* the bundled 5,000-digit MNIST sample shipped with ``mlxtend`` (optional)
* Bianchini's recursive planar functions ``f_k = g o t_k``
* generic delimited text (HIGGS-shaped files)
* linear-regression data with the moments used by the ODE bench
"""
from __future__ import annotations

import gzip
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core_math import ConfigError, make_rng

log = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataFormatError(ValueError):
    """A data file does not match its declared format."""


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    targets: np.ndarray
    kind: str = "classification"

    def __post_init__(self):
        if self.kind not in ("classification", "regression"):
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if self.features.ndim != 2 or self.targets.ndim != 2:
            raise ConfigError("features and targets must be 2-D")
        if self.features.shape[0] != self.targets.shape[0]:
            raise ConfigError("feature and target row counts differ")
        if self.features.shape[0] < 1:
            raise ConfigError("a dataset needs at least one example")
        if self.kind == "classification" and not np.all(np.isin(self.targets, (0.0, 1.0))):
            raise ConfigError("classification targets must be one-hot or {0,1}")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_targets(self) -> int:
        return self.targets.shape[1]

    def head(self, n: int) -> "Dataset":
        return Dataset(self.features[:n], self.targets[:n], self.kind)

    def take(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.targets[idx], self.kind)

    def split(self, n_first: int) -> tuple["Dataset", "Dataset"]:
        return self.take(slice(0, n_first)), self.take(slice(n_first, None))


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


# -- IDX ------------------------------------------------------------------

def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _read_idx(path, magic: int) -> np.ndarray:
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 8:
        raise DataFormatError(f"{path}: file too short for an IDX header")
    got = struct.unpack(">I", raw[:4])[0]
    if got != magic:
        raise DataFormatError(f"{path}: magic {got:#010x}, expected {magic:#010x}")
    ndim = got & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    payload = raw[header:]
    if len(payload) < count:
        raise DataFormatError(f"{path}: payload has {len(payload)} bytes, header promises {count}")
    return np.frombuffer(payload, dtype=np.uint8, count=count).reshape(dims)


def load_idx(images_path, labels_path, limit: int | None = None, n_classes: int = 10) -> Dataset:
    """Read an IDX image/label pair; pixels scaled by 1/255, labels one-hot."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if labels.size and labels.max() >= n_classes:
        raise DataFormatError(f"label {labels.max()} out of range for {n_classes} classes")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    x = images.reshape(images.shape[0], -1).astype(float) / 255.0
    return Dataset(x, one_hot(labels.astype(int), n_classes))


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 ``images`` (n x rows x cols) and ``labels`` (n,) as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    opener = lambda p: gzip.open(p, "wb") if Path(p).suffix == ".gz" else open(p, "wb")
    with opener(images_path) as f:
        f.write(struct.pack(">I", IDX_IMAGES_MAGIC))
        f.write(struct.pack(f">{images.ndim}I", *images.shape))
        f.write(images.tobytes())
    with opener(labels_path) as f:
        f.write(struct.pack(">I", IDX_LABELS_MAGIC))
        f.write(struct.pack(">I", labels.shape[0]))
        f.write(labels.tobytes())


def load_mnist_bundled() -> tuple[np.ndarray, np.ndarray]:
    """The 5,000-digit MNIST sample bundled with ``mlxtend`` as (uint8 images, labels)."""
    try:
        from mlxtend.data import mnist_data
    except ImportError as exc:
        raise DataFormatError(
            "the bundled MNIST sample needs the optional 'mlxtend' package "
            "(pip install mlxtend), or point the config at IDX files"
        ) from exc
    x, y = mnist_data()
    return x.reshape(-1, 28, 28).astype(np.uint8), y.astype(np.uint8)


def mnist_desk_subset(n: int = 5000, idx_dir=None, seed: int = 0) -> Dataset:
    """Desk-scale MNIST training set.

    Uses ``train-images-idx3-ubyte[.gz]`` / ``train-labels-idx1-ubyte[.gz]`` from
    ``idx_dir`` when given, otherwise the bundled sample. The bundled sample is
    sorted by class, so rows are shuffled with ``seed``.
    """
    if idx_dir is not None:
        d = Path(idx_dir)
        for suffix in ("", ".gz"):
            img, lab = d / f"train-images-idx3-ubyte{suffix}", d / f"train-labels-idx1-ubyte{suffix}"
            if img.exists() and lab.exists():
                return load_idx(img, lab, limit=n)
        raise DataFormatError(f"no MNIST training IDX files in {d}")
    images, labels = load_mnist_bundled()
    order = make_rng(seed).permutation(len(labels))[:n]
    x = images[order].reshape(len(order), -1).astype(float) / 255.0
    return Dataset(x, one_hot(labels[order].astype(int), 10))


# -- Bianchini functions --------------------------------------------------

@dataclass(frozen=True)
class BianchiniSpec:
    k: int
    n_samples: int
    seed: int = 0
    low: float = -1.0
    high: float = 1.0

    def __post_init__(self):
        if not 0 <= self.k <= 6:
            raise ConfigError(f"k must be in [0, 6], got {self.k}")
        if self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        if not self.low < self.high:
            raise ConfigError("sampling domain needs low < high")


def bianchini_transform(x: np.ndarray, k: int) -> np.ndarray:
    """``t_k(x)``: k-fold composition of ``t(x) = (1 - 2 x1^2, 1 - 2 x2^2)``."""
    y = np.asarray(x, dtype=float)
    for _ in range(k):
        y = 1.0 - 2.0 * y ** 2
    return y


def bianchini_label(x: np.ndarray, k: int) -> np.ndarray:
    """``f_k(x)`` in {0, 1}: 1 where ``1 - ||t_k(x)||^2 > 0``."""
    t = bianchini_transform(np.atleast_2d(x), k)
    return (1.0 - np.sum(t ** 2, axis=1) > 0).astype(float)


def gen_bianchini(spec: BianchiniSpec) -> Dataset:
    rng = make_rng(spec.seed)
    x = rng.uniform(spec.low, spec.high, size=(spec.n_samples, 2))
    return Dataset(x, bianchini_label(x, spec.k)[:, None])


# -- delimited text -------------------------------------------------------

def load_delimited(
    path,
    feature_columns: Sequence[int] | None = None,
    target_column: int = 0,
    header: bool = False,
    delimiter: str = ",",
    limit: int | None = None,
) -> Dataset:
    """Read numeric delimited text.

    ``feature_columns`` defaults to every column except the target. A target
    with exactly two distinct values becomes a {0,1} classification target
    (smaller value -> 0); anything else is a regression target.
    """
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if header and lineno == 1:
                continue
            line = line.strip()
            if not line:
                continue
            if limit is not None and len(rows) >= limit:
                break
            try:
                rows.append([float(v) for v in line.split(delimiter)])
            except ValueError as exc:
                raise DataFormatError(f"{path}: line {lineno}: {exc}") from None
            if len(rows[-1]) != len(rows[0]):
                raise DataFormatError(f"{path}: line {lineno}: expected {len(rows[0])} columns")
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    table = np.array(rows)
    ncol = table.shape[1]
    tcol = target_column % ncol
    if feature_columns is None:
        feature_columns = [c for c in range(ncol) if c != tcol]
    x = table[:, list(feature_columns)]
    t = table[:, tcol]
    values = np.unique(t)
    if len(values) == 2:
        return Dataset(x, (t == values[1]).astype(float)[:, None], "classification")
    return Dataset(x, t[:, None], "regression")


def save_delimited(data: Dataset, path, delimiter: str = ",", header: bool = True) -> None:
    """Write targets first, then features (the HIGGS column order)."""
    table = np.hstack([data.targets, data.features])
    names = [f"target{i}" for i in range(data.n_targets)] + [f"x{i}" for i in range(data.n_features)]
    np.savetxt(path, table, delimiter=delimiter, header=delimiter.join(names) if header else "",
               comments="", fmt="%.17g")


# -- linear-regression data with moments ----------------------------------

@dataclass(frozen=True)
class LinearStats:
    """Empirical moments: ``alpha = E(IT)``, ``beta = E(I^2)``, ``gamma = E(T^2)``
    (scalar case) and the matrices ``sigma_ii = E(I I^T)``, ``sigma_ti = E(T I^T)``."""

    alpha: float
    beta: float
    gamma: float
    sigma_ii: np.ndarray
    sigma_ti: np.ndarray
    degenerate: bool

    @property
    def fixed_point(self) -> float:
        """``P* = alpha / beta`` (scalar chains)."""
        if self.degenerate:
            raise ConfigError("beta = 0: the fixed-point manifold is undefined")
        return self.alpha / self.beta


def moments(data: Dataset) -> LinearStats:
    x, t = data.features, data.targets
    n = len(data)
    sii = x.T @ x / n
    sti = t.T @ x / n
    stt = t.T @ t / n
    alpha = float(sti[0, 0]) if sti.shape == (1, 1) else float("nan")
    beta = float(sii[0, 0]) if sii.shape == (1, 1) else float("nan")
    gamma = float(np.trace(stt))
    degenerate = bool(np.linalg.matrix_rank(sii) < sii.shape[0]) if np.any(sii) else True
    return LinearStats(alpha, beta, gamma, sii, sti, degenerate)


def gen_linear_stats(
    n: int,
    inputs: str | Callable[[np.random.Generator, int], np.ndarray] = "normal",
    target: np.ndarray | float | Callable[[np.ndarray], np.ndarray] = 1.0,
    noise: float = 0.0,
    seed: int = 0,
    input_dim: int = 1,
) -> tuple[Dataset, LinearStats]:
    """Regression data ``T = target(I) (+ noise)`` and its empirical moments.

    ``inputs`` is ``"normal"``, ``"uniform"`` (on [-1, 1]), ``"constant:<v>"``
    or a callable ``(rng, n) -> (n, input_dim)``. ``target`` is a scalar gain,
    an ``(N_L x N_0)`` matrix, or a callable on the input matrix.
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    rng = make_rng(seed)
    if callable(inputs):
        x = np.asarray(inputs(rng, n), dtype=float).reshape(n, -1)
    elif inputs == "normal":
        x = rng.normal(size=(n, input_dim))
    elif inputs == "uniform":
        x = rng.uniform(-1.0, 1.0, size=(n, input_dim))
    elif isinstance(inputs, str) and inputs.startswith("constant:"):
        x = np.full((n, input_dim), float(inputs.split(":", 1)[1]))
    else:
        raise ConfigError(f"unknown input distribution {inputs!r}")
    if callable(target):
        t = np.asarray(target(x), dtype=float).reshape(n, -1)
    else:
        gain = np.atleast_2d(np.asarray(target, dtype=float))
        if gain.shape == (1, 1):
            gain = gain[0, 0] * np.eye(x.shape[1])
        t = x @ gain.T
    if noise:
        t = t + noise * rng.normal(size=t.shape)
    data = Dataset(x, t, "regression")
    stats = moments(data)
    if stats.degenerate:
        log.warning("degenerate inputs: E(I I^T) is singular (beta = 0 in the scalar case)")
    return data, stats
