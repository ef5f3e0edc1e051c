"""MAT container reading and conversion to the portable binary formats.

The classifier toolkit consumes two little-endian formats:

* ``HSC1``: u32 height, u32 width, u32 bands, u8 normalized flag, then
  height*width*bands f32 in band-sequential order.
* ``HSL1``: u32 height, u32 width, u16 num_classes, then height*width
  u16 labels, row-major, 0 = unlabeled.

Both MAT v5 containers (scipy) and v7.3 HDF5 containers (h5py) are
supported; v7.3 stores arrays with reversed dimension order, which is
undone on load.
"""

from __future__ import annotations

import os
import struct
import tempfile

import h5py
import numpy as np
import scipy.io

from .manifest import IngestManifest, ManifestError


class IngestError(ValueError):
    pass


def load_variable(path: str, variable: str) -> np.ndarray:
    """One named array out of a MAT v5 or v7.3 container."""
    if not os.path.exists(path):
        raise IngestError(f"container not found: {path}")
    if h5py.is_hdf5(path):
        with h5py.File(path, "r") as fh:
            if variable not in fh:
                raise IngestError(
                    f"variable {variable!r} not in {path}; has {sorted(fh.keys())}"
                )
            arr = np.asarray(fh[variable])
        return arr.transpose(tuple(reversed(range(arr.ndim))))
    content = scipy.io.loadmat(path)
    if variable not in content:
        available = sorted(k for k in content if not k.startswith("__"))
        raise IngestError(f"variable {variable!r} not in {path}; has {available}")
    return np.asarray(content[variable])


def _atomic_write(path: str, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_cube_file(path: str, cube: np.ndarray) -> None:
    """Cube given as (height, width, bands); stored band-sequential f32."""
    h, w, b = cube.shape
    header = b"HSC1" + struct.pack("<IIIB", h, w, b, 0)
    payload = np.ascontiguousarray(cube.transpose(2, 0, 1), dtype="<f4").tobytes()
    _atomic_write(path, header + payload)


def write_label_file(path: str, labels: np.ndarray) -> None:
    h, w = labels.shape
    num_classes = int(labels.max(initial=0))
    header = b"HSL1" + struct.pack("<IIH", h, w, num_classes)
    _atomic_write(path, header + labels.astype("<u2").tobytes())


def read_cube_file(path: str) -> tuple[np.ndarray, bool]:
    """Read back an HSC1 file as (height, width, bands) plus its flag."""
    raw = open(path, "rb").read()
    if raw[:4] != b"HSC1":
        raise IngestError(f"{path}: bad magic {raw[:4]!r}")
    h, w, b, flag = struct.unpack("<IIIB", raw[4:17])
    expected = 17 + 4 * h * w * b
    if len(raw) != expected:
        raise IngestError(f"{path}: size {len(raw)} != header-implied {expected}")
    data = np.frombuffer(raw[17:], dtype="<f4").reshape(b, h, w)
    return data.transpose(1, 2, 0), bool(flag)


def read_label_file(path: str) -> np.ndarray:
    raw = open(path, "rb").read()
    if raw[:4] != b"HSL1":
        raise IngestError(f"{path}: bad magic {raw[:4]!r}")
    h, w, _ = struct.unpack("<IIH", raw[4:14])
    expected = 14 + 2 * h * w
    if len(raw) != expected:
        raise IngestError(f"{path}: size {len(raw)} != header-implied {expected}")
    return np.frombuffer(raw[14:], dtype="<u2").reshape(h, w)


def discard_bands(cube: np.ndarray, bands: tuple[int, ...]) -> np.ndarray:
    """Drop 1-based band indices from a (height, width, bands) cube."""
    if not bands:
        return cube
    keep = np.ones(cube.shape[2], dtype=bool)
    keep[np.asarray(bands) - 1] = False
    return cube[:, :, keep]


def convert(manifest: IngestManifest, echo=print) -> tuple[str, str]:
    """Convert one scene; returns the two output paths."""
    cube = load_variable(manifest.cube_source, manifest.cube_variable)
    if cube.ndim != 3:
        raise IngestError(f"cube variable has shape {cube.shape}, expected 3-D")
    labels = load_variable(manifest.labels_source, manifest.labels_variable)
    labels = np.squeeze(labels)
    if labels.ndim != 2:
        raise IngestError(f"label variable has shape {labels.shape}, expected 2-D")
    if labels.shape != cube.shape[:2]:
        raise IngestError(
            f"label grid {labels.shape} does not match cube spatial size {cube.shape[:2]}"
        )
    if np.any(labels < 0) or labels.max(initial=0) > 0xFFFF:
        raise IngestError("labels must be non-negative and fit in 16 bits")

    manifest.validate(num_bands=cube.shape[2])
    reduced = discard_bands(cube.astype(np.float64), manifest.discard_bands)
    write_cube_file(manifest.cube_out, reduced)
    write_label_file(manifest.labels_out, labels.astype(np.int64))

    h, w, b = reduced.shape
    counts = np.bincount(labels.astype(np.int64).ravel())
    echo(f"cube: {cube.shape[0]}x{cube.shape[1]}x{cube.shape[2]} "
         f"-> {h}x{w}x{b} ({len(manifest.discard_bands)} bands discarded) -> {manifest.cube_out}")
    echo(f"labels: {labels.shape[0]}x{labels.shape[1]}, "
         f"{int(counts[1:].sum())} labeled pixels in {len(counts) - 1} classes -> {manifest.labels_out}")
    return manifest.cube_out, manifest.labels_out
