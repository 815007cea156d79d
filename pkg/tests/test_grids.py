import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from morseuq.grids import (BinaryGrid, GridFormatError, ScalarGrid, full_offsets,
                           load_grid, luminance, neighbors, save_grid)


def dims_strategy():
    return st.one_of(
        st.tuples(st.integers(2, 6), st.integers(2, 6)),
        st.tuples(st.integers(2, 5), st.integers(2, 5), st.integers(2, 5)))


@st.composite
def coord_in_dims(draw):
    dims = draw(dims_strategy())
    c = tuple(draw(st.integers(0, d - 1)) for d in dims)
    return c, dims


class TestNeighbors:
    def test_corner_2d(self):
        assert neighbors((0, 0), (3, 3)) == [(0, 1), (1, 0), (1, 1)]

    def test_interior_2d_has_8(self):
        assert len(neighbors((1, 1), (3, 3))) == 8

    def test_interior_3d_has_26(self):
        assert len(neighbors((1, 1, 1), (3, 3, 3))) == 26

    def test_lexicographic_order(self):
        ns = neighbors((1, 1), (4, 4))
        assert ns == sorted(ns)

    def test_out_of_bounds_rejected(self):
        with pytest.raises(ValueError):
            neighbors((3, 0), (3, 3))

    def test_unknown_connectivity_rejected(self):
        with pytest.raises(ValueError):
            neighbors((0, 0), (3, 3), connectivity="face")

    @given(coord_in_dims())
    @settings(max_examples=60)
    def test_symmetry(self, cd):
        c, dims = cd
        for q in neighbors(c, dims):
            assert c in neighbors(q, dims)

    @given(dims_strategy())
    @settings(max_examples=40)
    def test_interior_count(self, dims):
        if any(d < 3 for d in dims):
            return
        c = tuple(1 for _ in dims)
        assert len(neighbors(c, dims)) == 3 ** len(dims) - 1


class TestGridTypes:
    def test_rank_must_be_2_or_3(self):
        with pytest.raises(ValueError):
            ScalarGrid(np.zeros(5))
        with pytest.raises(ValueError):
            ScalarGrid(np.zeros((2, 2, 2, 2)))

    def test_min_dim(self):
        with pytest.raises(ValueError):
            ScalarGrid(np.zeros((1, 5)))

    def test_immutability(self):
        g = ScalarGrid(np.zeros((3, 3)))
        with pytest.raises(ValueError):
            g.data[0, 0] = 1.0

    def test_full_offsets_sorted(self):
        offs = full_offsets(3)
        assert offs.shape == (26, 3)
        assert [tuple(o) for o in offs] == sorted(tuple(o) for o in offs)


class TestGrd1:
    def test_scalar_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        g = ScalarGrid(rng.random((5, 7)).astype(np.float32))
        p1, p2 = tmp_path / "a.grd", tmp_path / "b.grd"
        save_grid(g, p1)
        save_grid(load_grid(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_binary_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(4)
        g = BinaryGrid(rng.random((4, 4, 4)) > 0.5)
        p1, p2 = tmp_path / "a.grd", tmp_path / "b.grd"
        save_grid(g, p1)
        g2 = load_grid(p1)
        assert isinstance(g2, BinaryGrid)
        save_grid(g2, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_payload_length_mismatch(self, tmp_path):
        p = tmp_path / "bad.grd"
        header = b'{"magic":"GRD1","dims":[4,4],"dtype":"f32"}\n'
        p.write_bytes(header + np.zeros(15, np.float32).tobytes())
        with pytest.raises(GridFormatError) as exc:
            load_grid(p)
        assert exc.value.field == "payload"

    def test_unsupported_dtype(self, tmp_path):
        p = tmp_path / "bad.grd"
        p.write_bytes(b'{"magic":"GRD1","dims":[2,2],"dtype":"f64"}\n' + b"\x00" * 32)
        with pytest.raises(GridFormatError) as exc:
            load_grid(p)
        assert exc.value.field == "dtype"

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.grd"
        p.write_bytes(b'{"magic":"NOPE","dims":[2,2],"dtype":"f32"}\n' + b"\x00" * 16)
        with pytest.raises(GridFormatError) as exc:
            load_grid(p)
        assert exc.value.field == "magic"

    def test_garbage_header(self, tmp_path):
        p = tmp_path / "bad.grd"
        p.write_bytes(b"\xff\xfe not json\n1234")
        with pytest.raises(GridFormatError) as exc:
            load_grid(p)
        assert exc.value.field == "header"

    def test_bad_dims(self, tmp_path):
        p = tmp_path / "bad.grd"
        p.write_bytes(b'{"magic":"GRD1","dims":[1,5],"dtype":"f32"}\n' + b"\x00" * 20)
        with pytest.raises(GridFormatError) as exc:
            load_grid(p)
        assert exc.value.field == "dims"

    def test_u8_payload_must_be_binary(self, tmp_path):
        p = tmp_path / "bad.grd"
        p.write_bytes(b'{"magic":"GRD1","dims":[2,2],"dtype":"u8"}\n' + bytes([0, 1, 2, 1]))
        with pytest.raises(GridFormatError) as exc:
            load_grid(p)
        assert exc.value.field == "payload"


class TestPgm:
    def _write_p5(self, path, arr):
        h, w = arr.shape
        path.write_bytes(f"P5 {w} {h} 255\n".encode() + arr.astype(np.uint8).tobytes())

    def test_255_maps_to_one(self, tmp_path):
        p = tmp_path / "img.pgm"
        arr = np.array([[255, 0], [128, 51]], np.uint8)
        self._write_p5(p, arr)
        g = load_grid(p)
        assert isinstance(g, ScalarGrid)
        assert g.data[0, 0] == 1.0
        assert g.data[0, 1] == 0.0
        assert g.data[1, 1] == pytest.approx(51 / 255)

    def test_comment_lines_skipped(self, tmp_path):
        p = tmp_path / "img.pgm"
        p.write_bytes(b"P5\n# a comment\n2 2\n255\n" + bytes([0, 1, 2, 3]))
        g = load_grid(p)
        assert g.dims == (2, 2)

    def test_p6_converts_to_luminance(self, tmp_path):
        p = tmp_path / "img.ppm"
        rgb = np.zeros((2, 2, 3), np.uint8)
        rgb[0, 0] = (255, 0, 0)
        p.write_bytes(b"P6 2 2 255\n" + rgb.tobytes())
        g = load_grid(p)
        assert g.data[0, 0] == pytest.approx(0.299)

    def test_unsupported_maxval(self, tmp_path):
        p = tmp_path / "img.pgm"
        p.write_bytes(b"P5 2 2 65535\n" + b"\x00" * 8)
        with pytest.raises(GridFormatError) as exc:
            load_grid(p)
        assert exc.value.field == "maxval"


def test_luminance_weights():
    rgb = np.array([[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]])
    lum = luminance(rgb)
    assert lum[0, 0] == pytest.approx(0.299)
    assert lum[0, 1] == pytest.approx(0.587)
