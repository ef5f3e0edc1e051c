"""Shared domain types for the hyperspectral classification toolkit.

All types are immutable after construction (arrays are marked read-only)
and safe to share across worker threads.  Class labels follow the file
convention everywhere: 0 means "unlabeled", classes are 1..num_classes.
Probability tensors and cubes are stored plane-major, i.e. shape
(bands, height, width) and (num_classes, height, width).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DataError(ValueError):
    """Raised when an input array, file or parameter violates its contract."""


class ConvergenceError(RuntimeError):
    """Raised when an iterative solver fails to reach its stopping criterion."""


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(a)
    if out is a:
        out = a.copy()
    out.flags.writeable = False
    return out


def as_f32_grid(a: np.ndarray) -> np.ndarray:
    """Round float64 values to the nearest 32-bit float, kept in float64.

    Every persisted real is a 32-bit IEEE float on disk while internal
    arithmetic is 64-bit.  Quantizing at module boundaries makes in-memory
    pipelines bit-identical to their write-then-read counterparts.
    """
    return np.asarray(np.asarray(a, dtype=np.float32), dtype=np.float64)


@dataclass(frozen=True)
class HyperCube:
    """A height x width x bands spectral cube, band-sequential.

    ``data`` has shape (bands, height, width); the spectrum of pixel
    (i, j) is ``data[:, i, j]``.
    """

    height: int
    width: int
    bands: int
    data: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.size == self.bands * self.height * self.width:
            arr = arr.reshape(self.bands, self.height, self.width)
        object.__setattr__(self, "data", _freeze(arr))

    def spectra(self) -> np.ndarray:
        """All pixel spectra as an (height*width, bands) matrix, row-major pixels."""
        return self.data.reshape(self.bands, self.height * self.width).T


@dataclass(frozen=True)
class LabelMap:
    """Per-pixel integer class labels; 0 = unlabeled, classes are 1..num_classes."""

    height: int
    width: int
    labels: np.ndarray
    num_classes: int = field(default=0)

    def __post_init__(self):
        lab = _freeze(np.asarray(self.labels, dtype=np.int64).reshape(self.height, self.width))
        object.__setattr__(self, "labels", lab)
        if self.num_classes == 0:
            object.__setattr__(self, "num_classes", int(lab.max(initial=0)))

    def validate(self) -> None:
        if self.labels.shape != (self.height, self.width):
            raise DataError(
                f"label array shape {self.labels.shape} != ({self.height}, {self.width})"
            )
        if self.labels.min(initial=0) < 0:
            raise DataError("labels must be non-negative")
        if self.labels.max(initial=0) > self.num_classes:
            raise DataError(
                f"label {int(self.labels.max())} exceeds num_classes={self.num_classes}"
            )

    def class_pixels(self, label: int) -> np.ndarray:
        """(n, 2) row/col indices of pixels carrying the given 1-based label."""
        rows, cols = np.nonzero(self.labels == label)
        return np.column_stack([rows, cols])


@dataclass(frozen=True)
class SplitSpec:
    """Training/testing pixel sets: arrays of (row, col, class) triples.

    The training set is the pinned set used both to fit the classifier and
    to constrain the denoiser; testing pixels are the scored remainder.
    """

    training: np.ndarray
    testing: np.ndarray
    seed: int

    def __post_init__(self):
        object.__setattr__(
            self, "training", _freeze(np.asarray(self.training, dtype=np.int64).reshape(-1, 3))
        )
        object.__setattr__(
            self, "testing", _freeze(np.asarray(self.testing, dtype=np.int64).reshape(-1, 3))
        )

    def validate(self, labels: LabelMap) -> None:
        train_px = {(int(r), int(c)) for r, c, _ in self.training}
        test_px = {(int(r), int(c)) for r, c, _ in self.testing}
        overlap = train_px & test_px
        if overlap:
            raise DataError(f"training and testing sets overlap at {sorted(overlap)[0]}")
        for r, c, k in np.concatenate([self.training, self.testing]):
            actual = int(labels.labels[r, c])
            if actual == 0:
                raise DataError(f"split references unlabeled pixel ({r}, {c})")
            if actual != k:
                raise DataError(
                    f"split class {k} at ({r}, {c}) disagrees with label map ({actual})"
                )
        present = set(np.unique(labels.labels)) - {0}
        covered = {int(k) for _, _, k in self.training}
        missing = present - covered
        if missing:
            raise DataError(f"classes without training pixels: {sorted(missing)}")

    def training_mask(self, height: int, width: int) -> np.ndarray:
        mask = np.zeros((height, width), dtype=bool)
        mask[self.training[:, 0], self.training[:, 1]] = True
        return mask


@dataclass(frozen=True)
class ProbabilityTensor:
    """Per-class probability maps, shape (num_classes, height, width)."""

    height: int
    width: int
    num_classes: int
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64).reshape(
            self.num_classes, self.height, self.width
        )
        object.__setattr__(self, "values", _freeze(vals))

    def validate(self, simplex: bool = False, tol: float = 1e-6) -> None:
        if not np.all(np.isfinite(self.values)):
            bad = np.argwhere(~np.isfinite(self.values))[0]
            raise DataError(f"non-finite probability at (class, row, col) = {tuple(bad)}")
        if simplex:
            if self.values.min() < -tol:
                raise DataError(f"negative probability {self.values.min():.3e}")
            sums = self.values.sum(axis=0)
            worst = float(np.abs(sums - 1.0).max())
            if worst > tol:
                raise DataError(f"pixel class probabilities sum to 1 +/- {worst:.3e} > {tol:.0e}")


@dataclass(frozen=True)
class ConfusionMatrix:
    """Square count matrix; rows are true classes, columns predicted (1-based)."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise DataError(f"confusion matrix must be square, got {counts.shape}")
        if counts.min(initial=0) < 0:
            raise DataError("confusion matrix counts must be non-negative")
        object.__setattr__(self, "counts", _freeze(counts))

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def validate_cube(cube: HyperCube) -> None:
    """Check the cube invariants: dimensions, data length, finiteness."""
    if cube.height <= 0 or cube.width <= 0 or cube.bands <= 0:
        raise DataError(
            f"cube dimensions must be positive, got {cube.height}x{cube.width}x{cube.bands}"
        )
    expected = (cube.bands, cube.height, cube.width)
    if cube.data.shape != expected:
        raise DataError(
            f"cube data has {cube.data.size} values, expected "
            f"{cube.height * cube.width * cube.bands} for {cube.height}x{cube.width}x{cube.bands}"
        )
    finite = np.isfinite(cube.data)
    if not finite.all():
        band, row, col = (int(v) for v in np.argwhere(~finite)[0])
        raise DataError(f"non-finite value at band={band}, row={row}, col={col}")


def normalize_cube(cube: HyperCube) -> HyperCube:
    """Affinely map every band to [0, 1]; constant bands map to 0.

    Output values are rounded to the 32-bit float grid so that writing and
    re-reading a normalized cube is lossless.  Idempotent for non-constant
    bands: a [0, 1] band has min 0 and max 1 and maps to itself.
    """
    validate_cube(cube)
    lo = cube.data.min(axis=(1, 2), keepdims=True)
    hi = cube.data.max(axis=(1, 2), keepdims=True)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (cube.data - lo) / safe, 0.0)
    return HyperCube(cube.height, cube.width, cube.bands, as_f32_grid(out), normalized=True)
