import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hyperseg import formats
from hyperseg.grid import GridSpec
from hyperseg.segmenter import extract_boundary
from hyperseg.phantoms import ellipsoid, labels_from

from oracles import smooth_perturbation


def test_pgm_bytes_read_row_major(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_bytes(b"P5\n# comment\n2 2\n255\n" + bytes([0, 85, 170, 255]))
    a = formats.read_pgm(p)
    np.testing.assert_array_equal(a, [[0, 85], [170, 255]])
    np.testing.assert_array_equal(formats.load_image(p).ravel(), [0, 85, 170, 255])


def test_pgm_errors(tmp_path):
    p = tmp_path / "bad.pgm"
    p.write_bytes(b"P2\n2 2\n255\n0 1 2 3")
    with pytest.raises(formats.FormatError):
        formats.read_pgm(p)
    p.write_bytes(b"P5\n2 2\n255\n" + bytes(3))
    with pytest.raises(formats.FormatError):
        formats.read_pgm(p)
    with pytest.raises(formats.FormatError):
        formats.load_image(tmp_path / "x.png")


def test_mhd_wrong_payload(tmp_path):
    hdr = tmp_path / "v.mhd"
    hdr.write_text("NDims = 3\nDimSize = 128 128 128\nElementType = MET_UCHAR\nElementDataFile = v.raw\n")
    (tmp_path / "v.raw").write_bytes(bytes(1000))
    with pytest.raises(formats.FormatError):
        formats.read_mhd(hdr)
    hdr.write_text("NDims = 3\nDimSize = 128 128\nElementType = MET_UCHAR\nElementDataFile = v.raw\n")
    with pytest.raises(formats.FormatError):
        formats.read_mhd(hdr)
    hdr.write_text("NDims = 1\nDimSize = 1000\nElementType = MET_LONG\nElementDataFile = v.raw\n")
    with pytest.raises(formats.FormatError):
        formats.read_mhd(hdr)


def test_sixteen_bit_rescaled(tmp_path):
    a = np.array([[0, 1000], [30000, 65535]], dtype=np.uint16)
    formats.write_pgm(tmp_path / "a.pgm", a)
    np.testing.assert_array_equal(formats.read_pgm(tmp_path / "a.pgm"), a)
    img = formats.load_image(tmp_path / "a.pgm")
    assert img.max() == 255.0 and img.min() == 0.0
    v = np.zeros((4, 4, 4), dtype=np.uint16)
    v[1, 2, 3] = 65535
    formats.write_mhd(tmp_path / "v.mhd", v)
    assert formats.load_image(tmp_path / "v.mhd").max() == 255.0


def test_rescale_constant():
    assert not np.any(formats.rescale(np.full((3, 3), 9.0)))


def test_label_validation(tmp_path):
    formats.write_pgm(tmp_path / "l.pgm", np.array([[1, 3], [3, 1]], dtype=np.uint8))
    with pytest.raises(formats.FormatError):
        formats.load_labels(tmp_path / "l.pgm")
    formats.write_mhd(tmp_path / "f.mhd", np.ones((2, 2, 2), dtype=np.float32))
    with pytest.raises(formats.FormatError):
        formats.load_labels(tmp_path / "f.mhd")


@settings(max_examples=25, deadline=None)
@given(lab=arrays(np.uint8, st.tuples(st.integers(1, 9), st.integers(1, 9)), elements=st.integers(1, 4)))
def test_mask_round_trip_2d(tmp_path_factory, lab):
    path = tmp_path_factory.mktemp("m") / "mask.pgm"
    formats.write_labels(path, lab)
    back = formats.read_pgm(path)
    assert back.dtype == np.uint8 and back.shape == lab.shape
    assert back.tobytes() == lab.tobytes()


@settings(max_examples=25, deadline=None)
@given(lab=arrays(np.uint8, st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5)),
                  elements=st.integers(1, 4)))
def test_mask_round_trip_3d(tmp_path_factory, lab):
    path = tmp_path_factory.mktemp("m") / "mask.mhd"
    formats.write_labels(path, lab)
    back = formats.read_mhd(path)
    assert back.shape == lab.shape and back.tobytes() == lab.tobytes()


@settings(max_examples=20, deadline=None)
@given(dim=st.sampled_from([2, 3]), n=st.integers(1, 5), seed=st.integers(0, 2**31))
def test_transform_round_trip(tmp_path_factory, dim, n, seed):
    g = GridSpec(dim, n)
    Y = np.random.default_rng(seed).standard_normal(g.size) * 10.0 ** np.random.default_rng(seed).integers(-300, 300)
    path = tmp_path_factory.mktemp("t") / "transform.txt"
    formats.write_transform(path, g, Y)
    g2, Y2 = formats.read_transform(path)
    assert (g2.dim, g2.n) == (dim, n)
    assert Y2.tobytes() == np.asarray(Y, dtype="<f8").tobytes()
    with pytest.raises(ValueError):
        formats.write_transform(path, g, Y[:-1])


def test_transform_truncated(tmp_path):
    g = GridSpec(2, 2)
    formats.write_transform(tmp_path / "t.txt", g, smooth_perturbation(2, 2, 0, 0))
    raw = tmp_path / "t.raw"
    raw.write_bytes(raw.read_bytes()[:-8])
    with pytest.raises(formats.FormatError):
        formats.read_transform(tmp_path / "t.txt")


@pytest.mark.parametrize("dim", [2, 3])
def test_geometry_round_trip(tmp_path, dim):
    n = 12
    lab = labels_from(ellipsoid(n, (0.4,) * dim, 0.25), ellipsoid(n, (0.8,) * dim, 0.1))
    geo = extract_boundary(lab)
    formats.write_geometry(tmp_path / "b.txt", geo)
    back = formats.read_geometry(tmp_path / "b.txt")
    assert sorted(back) == sorted(geo)
    for k in geo:
        np.testing.assert_array_equal(back[k].vertices, geo[k].vertices)
        np.testing.assert_array_equal(back[k].elements, geo[k].elements)


def test_energy_log_and_summary(tmp_path):
    recs = [{"a": 1.5, "b": 2, "c": "x"}, {"a": 0.25, "b": 3, "c": "y"}]
    formats.write_energy_log(tmp_path / "e.csv", recs, ("a", "b"))
    assert formats.read_energy_log(tmp_path / "e.csv") == [{"a": 1.5, "b": 2.0}, {"a": 0.25, "b": 3.0}]
    formats.write_summary(tmp_path / "s.json", {"x": np.float64(1.0), "y": np.arange(2), "z": np.int64(3)})
    assert '"y": [\n    0,\n    1\n  ]' in (tmp_path / "s.json").read_text()
    with pytest.raises(TypeError):
        formats.write_summary(tmp_path / "s.json", {"x": object()})
