import numpy as np
import pytest

from msfcn.data import (AugmentSpec, DatasetManifest, Entry, apply_region_mask, augment, padded_extent,
                        read_rects, split_counts, split_dataset, synth_shapes, synth_temporal,
                        temporal_orders, tile_patches, untile)
from msfcn.errors import DataError
from msfcn.tensor import IGNORE_INDEX, save_tensor


@pytest.mark.parametrize("h,w,ph,pw,n", [(1417, 2652, 1536, 2816, 66), (1163, 2102, 1280, 2304, 45),
                                          (256, 256, 256, 256, 1), (1, 257, 256, 512, 2)])
def test_tiling_counts(h, w, ph, pw, n):
    assert padded_extent(h, 256) == ph and padded_extent(w, 256) == pw
    label = np.zeros((h, w), np.uint16)
    patches = tile_patches(np.zeros((1, 1, h, w), np.float32), label)
    assert len(patches) == n
    assert [rc for *_, rc in patches] == [(r, c) for r in range(ph // 256) for c in range(pw // 256)]


def test_tile_round_trip(rng):
    image = rng.standard_normal((2, 3, 70, 45)).astype(np.float32)
    label = rng.integers(0, 4, (70, 45)).astype(np.uint16)
    patches = tile_patches(image, label, patch=32)
    assert all(p[0].shape == (2, 3, 32, 32) for p in patches)
    np.testing.assert_array_equal(untile([(p[0], p[2]) for p in patches], 70, 45), image)
    np.testing.assert_array_equal(untile([(p[1], p[2]) for p in patches], 70, 45), label)


def test_padding_values(rng):
    image = rng.standard_normal((1, 1, 40, 40)).astype(np.float32) + 5
    label = np.ones((40, 40), np.uint16)
    patches = tile_patches(image, label, patch=32)
    img = np.concatenate([np.concatenate([p[0] for p in patches[:2]], -1),
                          np.concatenate([p[0] for p in patches[2:]], -1)], -2)
    lbl = np.concatenate([np.concatenate([p[1] for p in patches[:2]], -1),
                          np.concatenate([p[1] for p in patches[2:]], -1)], -2)
    assert not img[..., 40:, :].any() and not img[..., :, 40:].any()
    assert (lbl[40:, :] == IGNORE_INDEX).all() and (lbl[:, 40:] == IGNORE_INDEX).all()
    assert (lbl[:40, :40] == 1).all()


def test_untile_missing_cell(rng):
    patches = tile_patches(np.zeros((1, 1, 64, 64), np.float32), np.zeros((64, 64), np.uint16), 32)
    kept = [(p[1], p[2]) for p in patches if p[2] != (1, 0)]
    with pytest.raises(DataError, match=r"row=1, col=0"):
        untile(kept, 64, 64)


def test_tile_shape_mismatch():
    with pytest.raises(DataError):
        tile_patches(np.zeros((1, 1, 4, 4)), np.zeros((4, 5), np.uint16))


def test_region_mask(tmp_path):
    path = tmp_path / "rects.csv"
    path.write_text("x0,y0,x1,y1\n1,0,3,2\n")
    rects = read_rects(path)
    assert rects == [(1, 0, 3, 2)]
    label = np.zeros((3, 4), np.uint16)
    inside = apply_region_mask(label, rects, "inside")
    assert (inside[:2, 1:3] == 0).all() and (inside == IGNORE_INDEX).sum() == 8
    outside = apply_region_mask(label, rects, "outside")
    assert (outside == IGNORE_INDEX).sum() == 4


@pytest.mark.parametrize("n,counts", [(10, (6, 2, 2)), (7, (4, 1, 2)), (3, (1, 0, 2))])
def test_split_counts(n, counts):
    assert split_counts(n) == counts


def _manifest(n):
    return DatasetManifest("/tmp", [Entry(f"i{i}", f"l{i}") for i in range(n)], 2, 1, 1)


def test_split_dataset():
    a = split_dataset(_manifest(10), seed=3)
    b = split_dataset(_manifest(10), seed=3)
    c = split_dataset(_manifest(10), seed=4)
    splits = [e.split for e in a.entries]
    assert splits == [e.split for e in b.entries]
    assert splits != [e.split for e in c.entries]
    assert [splits.count(s) for s in ("train", "val", "test")] == [6, 2, 2]


@pytest.mark.parametrize("fractions", [(0.5, 0.5), (0.6, 0.6, -0.2), (0.5, 0.2, 0.2)])
def test_split_bad_fractions(fractions):
    with pytest.raises(DataError):
        split_dataset(_manifest(10), fractions)


class TestAugment:
    def _pair(self, rng):
        return (rng.standard_normal((3, 2, 8, 10)).astype(np.float32),
                rng.integers(0, 4, (8, 10)).astype(np.uint16))

    def test_flip_moves_label(self, rng):
        image, label = self._pair(rng)
        image[0, 0] = label
        out_img, out_lbl = augment(image, label, AugmentSpec(("hflip", "vflip"), prob=1.0), rng)
        np.testing.assert_array_equal(out_lbl, label[::-1, ::-1])
        np.testing.assert_array_equal(out_img[0, 0], out_lbl)

    def test_photometric_keeps_label(self, rng):
        image, label = self._pair(rng)
        spec = AugmentSpec(("color_enhance", "gaussian_blur", "random_noise"), prob=1.0)
        out_img, out_lbl = augment(image, label, spec, rng)
        np.testing.assert_array_equal(out_lbl, label)
        assert out_img.shape == image.shape and out_img.dtype == np.float32
        assert not np.array_equal(out_img, image)

    def test_blur_keeps_constant_image(self, rng):
        image = np.full((2, 1, 6, 6), 0.7, np.float32)
        out, _ = augment(image, np.zeros((6, 6), np.uint16), AugmentSpec(("gaussian_blur",), prob=1.0), rng)
        np.testing.assert_allclose(out, 0.7, atol=1e-6)

    def test_prob_zero_is_identity(self, rng):
        image, label = self._pair(rng)
        out_img, out_lbl = augment(image, label, AugmentSpec(prob=0.0), rng)
        np.testing.assert_array_equal(out_img, image)
        np.testing.assert_array_equal(out_lbl, label)

    def test_seeded(self, rng):
        image, label = self._pair(rng)
        a = augment(image, label, AugmentSpec(), np.random.default_rng(9))
        b = augment(image, label, AugmentSpec(), np.random.default_rng(9))
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_unknown(self):
        with pytest.raises(DataError):
            AugmentSpec(("rotate",))


def test_synth_shapes(tmp_path):
    m = synth_shapes(tmp_path / "a", num_images=5, size=32, num_classes=3, seed=2)
    loaded = DatasetManifest.load(tmp_path / "a" / "manifest.csv")
    loaded.validate()
    assert loaded.num_classes == 3 and loaded.channels == 3 and loaded.time_steps == 1
    assert [e.split for e in loaded.entries] == [e.split for e in m.entries]
    images, labels = loaded.load_split("train")
    assert images.shape == (3, 3, 1, 32, 32) and labels.dtype == np.uint16
    synth_shapes(tmp_path / "b", num_images=5, size=32, num_classes=3, seed=2)
    for e in m.entries:
        assert (tmp_path / "a" / e.image).read_bytes() == (tmp_path / "b" / e.image).read_bytes()


def test_synth_temporal_statistics(tmp_path):
    m = synth_temporal(tmp_path, num_images=4, size=16, t=5, block=4, noise=0.0)
    image, label = m.load_pair(m.entries[0])
    assert image.shape == (4, 5, 16, 16)
    assert (label == 1).sum() == (label == 0).sum()
    mean = image.mean(axis=1)
    std = image.std(axis=1)
    for c in range(4):
        np.testing.assert_allclose(mean[c][label == 0].mean(), mean[c][label == 1].mean(), atol=1e-6)
        np.testing.assert_allclose(std[c][label == 0].mean(), std[c][label == 1].mean(), atol=1e-6)
    ramp, shuffled = temporal_orders(5)
    assert sorted(ramp) == sorted(shuffled) and not np.array_equal(ramp, shuffled)


def test_synth_temporal_block_check(tmp_path):
    with pytest.raises(DataError):
        synth_temporal(tmp_path, size=30, block=4)


def test_manifest_errors(tmp_path):
    with pytest.raises(DataError):
        DatasetManifest.load(tmp_path / "missing.csv")
    m = synth_shapes(tmp_path, num_images=3, size=16, num_classes=2)
    bad = DatasetManifest(m.root, m.entries, num_classes=2, channels=4, time_steps=1)
    with pytest.raises(DataError):
        bad.validate()
    save_tensor(np.full((16, 16), 7, np.uint16), tmp_path / m.entries[0].label)
    with pytest.raises(DataError):
        m.validate()
