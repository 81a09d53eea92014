import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msfcn.errors import FormatError, ShapeError
from msfcn.tensor import (IGNORE_INDEX, concat_channels, load_tensor, pad_spatial_zero,
                          save_tensor, tensor_fill)


class TestFill:
    def test_zeros(self):
        x = tensor_fill((2, 2), 0.0)
        assert x.shape == (2, 2) and x.dtype == np.float32
        assert (x == 0).all()

    def test_singleton(self):
        x = tensor_fill((1, 1, 1, 1), 7.5)
        assert x.size == 1 and x.item() == 7.5

    def test_element_count(self):
        x = tensor_fill((3, 2, 4, 4), 1.0)
        assert x.size == 3 * 2 * 4 * 4 == 96
        assert x.sum() == 96

    @pytest.mark.parametrize("shape", [(), (1, 1, 1, 1, 1, 1), (2, 0), (0,)])
    def test_bad_shapes(self, shape):
        with pytest.raises(ShapeError):
            tensor_fill(shape, 1.0)


class TestConcat:
    def test_extents(self, rng):
        a = rng.standard_normal((2, 1, 2, 2)).astype(np.float32)
        b = rng.standard_normal((3, 1, 2, 2)).astype(np.float32)
        out = concat_channels(a, b)
        assert out.shape == (5, 1, 2, 2)
        np.testing.assert_array_equal(out[:2], a)
        np.testing.assert_array_equal(out[2:], b)

    def test_mismatch(self):
        with pytest.raises(ShapeError):
            concat_channels(np.zeros((2, 1, 2, 2)), np.zeros((2, 1, 3, 2)))

    def test_associative(self, rng):
        a, b, c = (rng.standard_normal((n, 2, 3, 3)) for n in (1, 2, 3))
        left = concat_channels(concat_channels(a, b), c)
        right = concat_channels(a, concat_channels(b, c))
        np.testing.assert_array_equal(left, right)


class TestPad:
    @pytest.mark.parametrize("h,w,th,tw", [(1417, 2652, 1536, 2816), (1163, 2102, 1280, 2304)])
    def test_reference_raster_sizes(self, h, w, th, tw):
        x = np.ones((1, 1, h, w), np.float32)
        y = pad_spatial_zero(x, th, tw)
        assert y.shape == (1, 1, th, tw)
        assert (y[..., :h, :w] == 1).all()
        assert y.sum() == h * w

    def test_identity(self, rng):
        x = rng.standard_normal((2, 3, 5, 7)).astype(np.float32)
        np.testing.assert_array_equal(pad_spatial_zero(x, 5, 7), x)

    def test_too_small(self):
        with pytest.raises(ShapeError):
            pad_spatial_zero(np.zeros((4, 4)), 3, 4)

    @given(h=st.integers(1, 9), w=st.integers(1, 9), dh=st.integers(0, 5), dw=st.integers(0, 5))
    @settings(max_examples=40, deadline=None)
    def test_padding_is_zero(self, h, w, dh, dw):
        x = np.random.default_rng(h * 31 + w).uniform(1, 2, (2, 1, h, w)).astype(np.float32)
        y = pad_spatial_zero(x, h + dh, w + dw)
        mask = np.ones(y.shape, bool)
        mask[..., :h, :w] = False
        assert (y[mask] == 0.0).all()
        np.testing.assert_array_equal(y[..., :h, :w], x)


class TestTNS:
    def test_round_trip(self, tmp_path, rng):
        x = rng.standard_normal((3, 1, 8, 8)).astype(np.float32)
        save_tensor(x, tmp_path / "x.tns")
        y = load_tensor(tmp_path / "x.tns")
        assert y.dtype == x.dtype and y.shape == x.shape
        assert x.tobytes() == y.tobytes()

    def test_file_size(self, tmp_path):
        save_tensor(np.array([[1, 2], [3, 4]], np.float32), tmp_path / "x.tns")
        # magic + dtype + rank + reserved + 2 extents + 4 values
        assert os.path.getsize(tmp_path / "x.tns") == 4 + 1 + 1 + 2 + 2 * 4 + 4 * 4 == 32

    def test_header_bytes(self, tmp_path):
        save_tensor(np.array([7, 65535], np.uint16), tmp_path / "l.tns")
        raw = (tmp_path / "l.tns").read_bytes()
        assert raw == b"TNS1" + bytes([2, 1, 0, 0]) + (2).to_bytes(4, "little") + bytes([7, 0, 255, 255])

    def test_labels(self, tmp_path):
        lbl = np.array([[0, 3], [IGNORE_INDEX, 1]], np.uint16)
        save_tensor(lbl, tmp_path / "l.tns")
        np.testing.assert_array_equal(load_tensor(tmp_path / "l.tns"), lbl)

    def _corrupt(self, tmp_path, offset, value):
        path = tmp_path / "x.tns"
        save_tensor(np.ones((2, 2), np.float32), path)
        raw = bytearray(path.read_bytes())
        raw[offset:offset + len(value)] = value
        path.write_bytes(bytes(raw))
        return path

    @pytest.mark.parametrize("offset,value,field", [
        (0, b"XXXX", "magic"),
        (4, bytes([9]), "dtype"),
        (5, bytes([0]), "rank"),
        (5, bytes([6]), "rank"),
        (6, bytes([1]), "reserved"),
        (8, (0).to_bytes(4, "little"), "extents"),
        (8, (3).to_bytes(4, "little"), "payload"),
    ])
    def test_corruption(self, tmp_path, offset, value, field):
        path = self._corrupt(tmp_path, offset, value)
        with pytest.raises(FormatError) as info:
            load_tensor(path)
        assert info.value.field == field

    def test_trailing_bytes(self, tmp_path):
        path = tmp_path / "x.tns"
        save_tensor(np.ones(3, np.float32), path)
        path.write_bytes(path.read_bytes() + b"\0")
        with pytest.raises(FormatError, match="trailing"):
            load_tensor(path)

    def test_unsupported_dtype(self, tmp_path):
        with pytest.raises(FormatError):
            save_tensor(np.ones(3, np.float64), tmp_path / "x.tns")
