"""Sample pools, labeled/unlabeled splits, synthetic generators and file loaders.

A :class:`Pool` always carries ground-truth targets for every sample (the
generators and loaders know them); which of those targets the learner is
allowed to see is decided by the attached :class:`SplitSpec`.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataFormatError(ValueError):
    """Raised when an on-disk pool does not conform to its declared format."""


@dataclass(frozen=True)
class SplitSpec:
    labeled_ids: np.ndarray
    unlabeled_ids: np.ndarray
    class_count: int
    seed: int

    @property
    def n_labeled(self) -> int:
        return len(self.labeled_ids)

    def validate(self, n: int, targets: np.ndarray | None = None) -> None:
        lab = set(self.labeled_ids.tolist())
        unl = set(self.unlabeled_ids.tolist())
        if lab & unl:
            raise ValueError("labeled and unlabeled ids overlap")
        if lab | unl != set(range(n)):
            raise ValueError("split does not cover every sample id")
        if targets is not None:
            seen = np.unique(targets[self.labeled_ids])
            if len(seen) != self.class_count:
                raise ValueError("every class needs at least one labeled sample")

    def __eq__(self, other):
        if not isinstance(other, SplitSpec):
            return NotImplemented
        return (
            self.class_count == other.class_count
            and self.seed == other.seed
            and np.array_equal(self.labeled_ids, other.labeled_ids)
            and np.array_equal(self.unlabeled_ids, other.unlabeled_ids)
        )


@dataclass(frozen=True)
class Pool:
    """Immutable set of samples with ground truth and an optional split."""

    features: np.ndarray
    targets: np.ndarray
    class_count: int
    split: SplitSpec | None = field(default=None, compare=False)

    def __post_init__(self):
        X = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.asarray(self.targets, dtype=np.int64)
        if X.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {X.shape}")
        if len(y) != len(X):
            raise ValueError(f"{len(X)} samples but {len(y)} targets")
        if not np.all(np.isfinite(X)):
            raise ValueError("features contain non-finite values")
        if self.class_count < 2:
            raise ValueError("a pool needs at least 2 classes")
        if len(y) and (y.min() < 0 or y.max() >= self.class_count):
            raise ValueError("targets outside [0, class_count)")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "targets", y)
        if self.split is not None:
            self.split.validate(len(X), y)

    @property
    def n(self) -> int:
        return len(self.features)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def labels(self) -> np.ndarray:
        """Targets visible to the learner: -1 for every unlabeled sample."""
        out = np.full(self.n, -1, dtype=np.int64)
        if self.split is None:
            return out
        out[self.split.labeled_ids] = self.targets[self.split.labeled_ids]
        return out

    def with_split(self, split: SplitSpec) -> "Pool":
        return Pool(self.features, self.targets, self.class_count, split)

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(np.asarray(self.features.shape, dtype=np.int64).tobytes())
        h.update(self.features.tobytes())
        h.update(self.targets.tobytes())
        return h.hexdigest()


def generate_two_moons(n: int, noise: float = 0.1, seed: int = 0) -> Pool:
    """Two interleaved half circles; class 0 is the upper moon."""
    if n < 2:
        raise ValueError(f"two moons needs n >= 2, got {n}")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    n0 = n - n // 2
    n1 = n // 2
    t0 = np.linspace(0.0, np.pi, n0)
    t1 = np.linspace(0.0, np.pi, n1)
    upper = np.column_stack([np.cos(t0), np.sin(t0)])
    lower = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    X = np.vstack([upper, lower])
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    if noise > 0:
        X = X + rng.normal(scale=noise, size=X.shape)
    perm = rng.permutation(n)
    return Pool(X[perm], y[perm], 2)


def _blob_centers(C, d, separation, rng):
    side = separation * max(2.0, C ** (1.0 / d)) * 1.5
    for _ in range(1000):
        centers = rng.uniform(0.0, side, size=(C, d))
        diff = centers[:, None, :] - centers[None, :, :]
        dist = np.sqrt((diff**2).sum(-1))
        np.fill_diagonal(dist, np.inf)
        if dist.min() >= separation:
            return centers
        side *= 1.05
    # fall back to a grid, always feasible
    per_axis = int(np.ceil(C ** (1.0 / d)))
    grid = np.stack(np.meshgrid(*[np.arange(per_axis)] * d, indexing="ij"), -1)
    return grid.reshape(-1, d)[:C] * float(separation)


def generate_blobs(
    n: int, C: int, d: int = 2, separation: float = 10.0, seed: int = 0, std: float = 1.0
) -> Pool:
    """``C`` isotropic Gaussian clusters whose centers are pairwise >= ``separation`` apart."""
    if n < C:
        raise ValueError(f"need n >= C, got n={n}, C={C}")
    if separation <= 0:
        raise ValueError("separation must be positive")
    rng = np.random.default_rng(seed)
    centers = _blob_centers(C, d, separation, rng)
    y = np.arange(n, dtype=np.int64) % C
    rng.shuffle(y)
    X = centers[y] + rng.normal(scale=std, size=(n, d))
    return Pool(X, y, C)


def make_split(pool: Pool, n_l: int, seed: int) -> SplitSpec:
    """Stratified labeled/unlabeled split; each class gets floor or ceil of n_l / C."""
    C = pool.class_count
    if n_l < C:
        raise ValueError(f"n_l={n_l} < C={C}: some class would have no label")
    if n_l > pool.n:
        raise ValueError(f"n_l={n_l} exceeds pool size {pool.n}")
    rng = np.random.default_rng(seed)
    by_class = [np.flatnonzero(pool.targets == c) for c in range(C)]
    quota = np.full(C, n_l // C)
    extra = rng.permutation(C)[: n_l % C]
    quota[extra] += 1
    # shift quota away from classes too small to fill it
    sizes = np.array([len(ix) for ix in by_class])
    if np.any(sizes == 0):
        raise ValueError("every class needs at least one sample")
    overflow = int(np.maximum(quota - sizes, 0).sum())
    quota = np.minimum(quota, sizes)
    while overflow:
        room = np.flatnonzero(quota < sizes)
        quota[room[0]] += 1
        overflow -= 1
    labeled = np.concatenate(
        [rng.choice(ix, size=q, replace=False) for ix, q in zip(by_class, quota)]
    )
    labeled = np.sort(labeled)
    unlabeled = np.setdiff1d(np.arange(pool.n), labeled)
    return SplitSpec(labeled, unlabeled, C, seed)


# ---------------------------------------------------------------------------
# IDX


def _read_idx(path, expected_magic, what):
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise DataFormatError(f"{what}: truncated header (magic)")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        if what == "images" and magic == 0x00000804:
            pass
        else:
            raise DataFormatError(
                f"{what}: bad magic number 0x{magic:08x}, expected 0x{expected_magic:08x}"
            )
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError(f"{what}: truncated header (dims)")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header < count:
        raise DataFormatError(
            f"{what}: truncated data, expected {count} bytes, found {len(raw) - header}"
        )
    data = np.frombuffer(raw, dtype=np.uint8, count=count, offset=header)
    return data.reshape(dims)


def load_idx_images(images_path, labels_path) -> Pool:
    """Load an IDX image/label pair; pixels scaled to [0, 1] and flattened."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, "images")
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, "labels")
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(
            f"count: {images.shape[0]} images but {labels.shape[0]} labels"
        )
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    y = labels.astype(np.int64)
    C = max(2, int(y.max()) + 1) if len(y) else 2
    return Pool(X, y, C)


def save_idx_images(pool: Pool, images_path, labels_path, image_shape=None) -> None:
    """Write ``pool`` as IDX; features are quantized to the 1/255 grid."""
    if image_shape is None:
        image_shape = (1, pool.dim)
    if int(np.prod(image_shape)) != pool.dim:
        raise ValueError(f"image shape {image_shape} does not hold {pool.dim} features")
    if pool.targets.max(initial=0) > 255:
        raise ValueError("IDX labels are single bytes")
    pixels = np.clip(np.rint(pool.features * 255.0), 0, 255).astype(np.uint8)
    dims = (pool.n, *image_shape)
    magic = 0x00000800 | len(dims)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(f">I{len(dims)}I", magic, *dims))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, pool.n))
        fh.write(pool.targets.astype(np.uint8).tobytes())


# ---------------------------------------------------------------------------
# CSV: header f0,...,f{d-1},label


def load_csv(path, class_count: int | None = None) -> Pool:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError("csv: empty file") from None
        d = len(header) - 1
        expected = [f"f{i}" for i in range(d)] + ["label"]
        if header != expected:
            raise DataFormatError(f"csv: header must be f0..f{d - 1},label, got {header}")
        rows = list(reader)
    X = np.empty((len(rows), d))
    y = np.empty(len(rows), dtype=np.int64)
    for i, row in enumerate(rows):
        if len(row) != d + 1:
            raise DataFormatError(f"csv: row {i + 1} has {len(row)} fields, expected {d + 1}")
        try:
            X[i] = [float(v) for v in row[:d]]
            y[i] = int(row[d])
        except ValueError as exc:
            raise DataFormatError(f"csv: row {i + 1}: {exc}") from None
    C = class_count if class_count is not None else max(2, int(y.max()) + 1)
    return Pool(X, y, C)


def save_csv(pool: Pool, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(pool.dim)] + ["label"])
        for x, t in zip(pool.features, pool.targets):
            writer.writerow([repr(float(v)) for v in x] + [int(t)])
