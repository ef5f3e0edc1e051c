"""Portable little-endian binary formats and atomic file writing.

Formats (magic bytes, then header, then payload):

* cube  ``HSC1``: u32 height, u32 width, u32 bands, u8 normalized flag,
  height*width*bands f32, band-sequential.
* label ``HSL1``: u32 height, u32 width, u16 num_classes,
  height*width u16 labels, row-major, 0 = unlabeled.
* split ``HSS1``: u64 seed, u32 n_train, n_train x (u32 row, u32 col);
  the testing set is implicitly every other labeled pixel.
* probs ``HSP1``: u32 height, u32 width, u16 num_classes, class-major f32.
* model ``HSM1``: u16 num_classes, u8 kernel kind, f64 sigma, u32 bands,
  then one record per class pair (lexicographic order): u32 n_sv, f64 bias,
  f64 rho, f64 tau, f64 nu, n_sv x (u32 pixel index or 0xFFFFFFFF for
  inline-only, f64 alpha*y, bands x f32 spectrum).
"""

from __future__ import annotations

import os
import struct
import tempfile
from typing import Callable

import numpy as np

from .core import DataError, HyperCube, LabelMap, ProbabilityTensor, SplitSpec, validate_cube
from .svm import BinaryModel, KernelSpec, MulticlassModel, class_pairs

CUBE_MAGIC = b"HSC1"
LABEL_MAGIC = b"HSL1"
SPLIT_MAGIC = b"HSS1"
PROB_MAGIC = b"HSP1"
MODEL_MAGIC = b"HSM1"

INLINE_SV = 0xFFFFFFFF

_KERNEL_KINDS = {"rbf": 0}
_KERNEL_NAMES = {0: "rbf"}


def atomic_write(path: str, writer: Callable) -> None:
    """Write via a temp file in the target directory, then rename into place."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            writer(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise DataError(f"truncated file: wanted {n} bytes, got {len(buf)}")
    return buf


def _expect_magic(fh, magic: bytes) -> None:
    got = _read_exact(fh, 4)
    if got != magic:
        raise DataError(f"bad magic {got!r}, expected {magic!r}")


def write_cube(path: str, cube: HyperCube) -> None:
    validate_cube(cube)

    def writer(fh):
        fh.write(CUBE_MAGIC)
        fh.write(struct.pack("<IIIB", cube.height, cube.width, cube.bands, int(cube.normalized)))
        fh.write(cube.data.astype("<f4").tobytes())

    atomic_write(path, writer)


def read_cube(path: str) -> HyperCube:
    with open(path, "rb") as fh:
        _expect_magic(fh, CUBE_MAGIC)
        h, w, b, flag = struct.unpack("<IIIB", _read_exact(fh, 13))
        data = np.frombuffer(_read_exact(fh, 4 * h * w * b), dtype="<f4")
    cube = HyperCube(h, w, b, data.astype(np.float64), normalized=bool(flag))
    validate_cube(cube)
    return cube


def write_labels(path: str, labels: LabelMap) -> None:
    labels.validate()
    if labels.num_classes > 0xFFFF:
        raise DataError("num_classes exceeds u16 range")

    def writer(fh):
        fh.write(LABEL_MAGIC)
        fh.write(struct.pack("<IIH", labels.height, labels.width, labels.num_classes))
        fh.write(labels.labels.astype("<u2").tobytes())

    atomic_write(path, writer)


def read_labels(path: str) -> LabelMap:
    with open(path, "rb") as fh:
        _expect_magic(fh, LABEL_MAGIC)
        h, w, c = struct.unpack("<IIH", _read_exact(fh, 10))
        lab = np.frombuffer(_read_exact(fh, 2 * h * w), dtype="<u2")
    out = LabelMap(h, w, lab.astype(np.int64).reshape(h, w), num_classes=c)
    out.validate()
    return out


def write_split(path: str, split: SplitSpec) -> None:
    def writer(fh):
        fh.write(SPLIT_MAGIC)
        fh.write(struct.pack("<QI", split.seed, len(split.training)))
        fh.write(split.training[:, :2].astype("<u4").tobytes())

    atomic_write(path, writer)


def read_split(path: str, labels: LabelMap) -> SplitSpec:
    """Load a split; classes and the testing set are resolved from the label map."""
    with open(path, "rb") as fh:
        _expect_magic(fh, SPLIT_MAGIC)
        seed, n_train = struct.unpack("<QI", _read_exact(fh, 12))
        coords = np.frombuffer(_read_exact(fh, 8 * n_train), dtype="<u4")
    coords = coords.astype(np.int64).reshape(n_train, 2)
    klass = labels.labels[coords[:, 0], coords[:, 1]]
    if np.any(klass == 0):
        bad = coords[np.argmax(klass == 0)]
        raise DataError(f"split lists unlabeled pixel ({bad[0]}, {bad[1]})")
    training = np.column_stack([coords, klass])
    mask = np.zeros((labels.height, labels.width), dtype=bool)
    mask[coords[:, 0], coords[:, 1]] = True
    rows, cols = np.nonzero((labels.labels > 0) & ~mask)
    testing = np.column_stack([rows, cols, labels.labels[rows, cols]])
    split = SplitSpec(training, testing, seed)
    split.validate(labels)
    return split


def write_probabilities(path: str, tensor: ProbabilityTensor) -> None:
    tensor.validate(simplex=False)

    def writer(fh):
        fh.write(PROB_MAGIC)
        fh.write(struct.pack("<IIH", tensor.height, tensor.width, tensor.num_classes))
        fh.write(tensor.values.astype("<f4").tobytes())

    atomic_write(path, writer)


def read_probabilities(path: str) -> ProbabilityTensor:
    with open(path, "rb") as fh:
        _expect_magic(fh, PROB_MAGIC)
        h, w, c = struct.unpack("<IIH", _read_exact(fh, 10))
        vals = np.frombuffer(_read_exact(fh, 4 * h * w * c), dtype="<f4")
    return ProbabilityTensor(h, w, c, vals.astype(np.float64))


def write_model(path: str, model: MulticlassModel) -> None:
    kind = _KERNEL_KINDS[model.kernel.kind]

    def writer(fh):
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<HBdI", model.num_classes, kind, model.kernel.sigma, model.bands))
        for pair in class_pairs(model.num_classes):
            bm = model.pairwise[pair]
            fh.write(struct.pack("<Idddd", len(bm.alphas), bm.bias, bm.rho, bm.tau, bm.nu))
            sv32 = bm.support_vectors.astype("<f4")
            for i in range(len(bm.alphas)):
                fh.write(struct.pack("<Id", INLINE_SV, bm.alphas[i]))
                fh.write(sv32[i].tobytes())

    atomic_write(path, writer)


def read_model(path: str) -> MulticlassModel:
    with open(path, "rb") as fh:
        _expect_magic(fh, MODEL_MAGIC)
        c, kind, sigma, bands = struct.unpack("<HBdI", _read_exact(fh, 15))
        if kind not in _KERNEL_NAMES:
            raise DataError(f"unknown kernel kind {kind}")
        kernel = KernelSpec(_KERNEL_NAMES[kind], sigma)
        pairwise = {}
        for pair in class_pairs(c):
            n_sv, bias, rho, tau, nu = struct.unpack("<Idddd", _read_exact(fh, 36))
            alphas = np.empty(n_sv)
            svs = np.empty((n_sv, bands))
            for i in range(n_sv):
                _, alphas[i] = struct.unpack("<Id", _read_exact(fh, 12))
                svs[i] = np.frombuffer(_read_exact(fh, 4 * bands), dtype="<f4")
            pairwise[pair] = BinaryModel(
                support_vectors=svs, alphas=alphas, bias=bias,
                kernel=kernel, rho=rho, tau=tau, nu=nu,
            )
    return MulticlassModel(num_classes=c, bands=bands, kernel=kernel, pairwise=pairwise)


def write_pgm(path: str, counts: np.ndarray, maxval: int) -> None:
    """Binary (P5) PGM; 1 byte per sample for maxval < 256 else 2 bytes big-endian."""
    counts = np.asarray(counts)
    if counts.min(initial=0) < 0 or counts.max(initial=0) > maxval:
        raise DataError("PGM samples out of range")
    if not 0 < maxval < 65536:
        raise DataError(f"PGM maxval {maxval} out of range")
    h, w = counts.shape

    def writer(fh):
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        if maxval < 256:
            fh.write(counts.astype(np.uint8).tobytes())
        else:
            fh.write(counts.astype(">u2").tobytes())

    atomic_write(path, writer)
