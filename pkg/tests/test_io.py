import os

import numpy as np
import pytest

import hsiclass.io as hio
from hsiclass import (
    DataError,
    HyperCube,
    KernelSpec,
    LabelMap,
    ProbabilityTensor,
    SplitSpec,
    as_f32_grid,
    decision_batch,
    train_multiclass,
)
from hsiclass.pipeline import stratified_split

from tests.helpers import synthetic_scene


@pytest.fixture
def rng():
    return np.random.default_rng(11)


def test_cube_roundtrip_bit_exact(tmp_path, rng):
    data = as_f32_grid(rng.normal(size=(3, 4, 5)))
    cube = HyperCube(4, 5, 3, data, normalized=False)
    path = str(tmp_path / "x.hsc")
    hio.write_cube(path, cube)
    back = hio.read_cube(path)
    assert (back.height, back.width, back.bands) == (4, 5, 3)
    assert back.normalized == cube.normalized
    assert np.array_equal(back.data, cube.data)
    # writing what was read reproduces the file byte for byte
    path2 = str(tmp_path / "y.hsc")
    hio.write_cube(path2, back)
    assert open(path, "rb").read() == open(path2, "rb").read()


def test_label_roundtrip_bit_exact(tmp_path, rng):
    labels = LabelMap(6, 7, rng.integers(0, 5, size=(6, 7)), num_classes=4)
    path = str(tmp_path / "gt.hsl")
    hio.write_labels(path, labels)
    back = hio.read_labels(path)
    assert np.array_equal(back.labels, labels.labels)
    assert back.num_classes == 4


def test_split_roundtrip(tmp_path):
    labels = LabelMap(4, 4, np.arange(16).reshape(4, 4) % 3 + 1)
    split = stratified_split(labels, seed=9, percentage=40.0)
    path = str(tmp_path / "s.hss")
    hio.write_split(path, split)
    back = hio.read_split(path, labels)
    assert back.seed == 9
    assert np.array_equal(back.training, split.training)
    assert np.array_equal(back.testing, split.testing)


def test_probability_roundtrip_bit_exact(tmp_path, rng):
    vals = as_f32_grid(rng.uniform(size=(3, 4, 2)))
    tensor = ProbabilityTensor(4, 2, 3, vals)
    path = str(tmp_path / "p.hsp")
    hio.write_probabilities(path, tensor)
    back = hio.read_probabilities(path)
    assert np.array_equal(back.values, tensor.values)


def test_model_roundtrip_preserves_predictions(tmp_path):
    cube, labels = synthetic_scene(height=10, width=10, num_classes=3, seed=5)
    cube = HyperCube(10, 10, cube.bands, as_f32_grid(cube.data))
    split = stratified_split(labels, seed=1, percentage=30.0)
    model = train_multiclass(cube, split, nu=0.3, kernel=KernelSpec("rbf", 1.0))
    path = str(tmp_path / "m.hsm")
    hio.write_model(path, model)
    back = hio.read_model(path)
    assert back.num_classes == model.num_classes
    assert back.bands == model.bands
    assert back.kernel == model.kernel
    X = cube.spectra()[:17]
    for pair, bm in model.pairwise.items():
        other = back.pairwise[pair]
        assert np.array_equal(other.alphas, bm.alphas)
        assert other.bias == bm.bias
        assert (other.rho, other.tau, other.nu) == (bm.rho, bm.tau, bm.nu)
        assert np.array_equal(decision_batch(other, X), decision_batch(bm, X))


def test_bad_magic_rejected(tmp_path):
    path = str(tmp_path / "bad.hsc")
    with open(path, "wb") as fh:
        fh.write(b"NOPE" + b"\0" * 32)
    with pytest.raises(DataError, match="magic"):
        hio.read_cube(path)


def test_truncated_file_rejected(tmp_path):
    cube = HyperCube(2, 2, 2, np.zeros(8))
    path = str(tmp_path / "t.hsc")
    hio.write_cube(path, cube)
    data = open(path, "rb").read()
    with open(path, "wb") as fh:
        fh.write(data[:-5])
    with pytest.raises(DataError, match="truncated"):
        hio.read_cube(path)


def test_atomic_write_preserves_original_on_failure(tmp_path):
    path = str(tmp_path / "x.bin")
    hio.atomic_write(path, lambda fh: fh.write(b"original"))

    def boom(fh):
        fh.write(b"partial")
        raise RuntimeError("disk on fire")

    with pytest.raises(RuntimeError):
        hio.atomic_write(path, boom)
    assert open(path, "rb").read() == b"original"
    assert [f for f in os.listdir(tmp_path) if f.startswith(".tmp-")] == []


def test_pgm_bytes(tmp_path):
    counts = np.array([[0, 1], [2, 3]])
    path = str(tmp_path / "h.pgm")
    hio.write_pgm(path, counts, maxval=10)
    assert open(path, "rb").read() == b"P5\n2 2\n10\n" + bytes([0, 1, 2, 3])
    hio.write_pgm(path, counts, maxval=300)
    want = b"P5\n2 2\n300\n" + np.array([[0, 1], [2, 3]], dtype=">u2").tobytes()
    assert open(path, "rb").read() == want
    with pytest.raises(DataError):
        hio.write_pgm(str(tmp_path / "bad.pgm"), counts, maxval=2)
