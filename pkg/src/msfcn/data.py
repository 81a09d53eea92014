"""Dataset manifests, padding/tiling arithmetic, splits, augmentation and
synthetic datasets."""
from __future__ import annotations

import colorsys
import csv
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from . import config as cfgio
from .errors import DataError
from .tensor import IGNORE_INDEX, load_tensor, pad_spatial_zero, save_tensor

SPLITS = ("train", "val", "test")


@dataclass
class Entry:
    image: str
    label: str
    split: str = "train"


@dataclass
class DatasetManifest:
    """Catalog of image/label TNS pairs with split assignments.

    Paths are stored relative to ``root`` (the manifest's directory).
    Images are ``(c, t, h, w)`` float32, labels ``(h, w)`` uint16.
    """

    root: str
    entries: list[Entry]
    num_classes: int
    channels: int
    time_steps: int
    patch_size: int = 256
    granularity: str = "image"
    fractions: tuple = (0.6, 0.2, 0.2)

    def split(self, name) -> list[Entry]:
        return [e for e in self.entries if e.split == name]

    def path(self, rel) -> str:
        return rel if os.path.isabs(rel) else os.path.join(self.root, rel)

    def load_pair(self, entry: Entry):
        image = load_tensor(self.path(entry.image))
        label = load_tensor(self.path(entry.label))
        if image.ndim != 4:
            raise DataError(f"{entry.image}: expected (c, t, h, w) image, got shape {image.shape}")
        if label.ndim != 2 or label.dtype != np.uint16:
            raise DataError(f"{entry.label}: expected (h, w) uint16 label map")
        if image.shape[2:] != label.shape:
            raise DataError(f"{entry.image}: image {image.shape[2:]} and label {label.shape} disagree")
        return image, label

    def load_split(self, name):
        entries = self.split(name)
        if not entries:
            raise DataError(f"split {name!r} is empty")
        pairs = [self.load_pair(e) for e in entries]
        images = np.stack([p[0] for p in pairs])
        labels = np.stack([p[1] for p in pairs])
        return images, labels

    def validate(self):
        for e in self.entries:
            if e.split not in SPLITS:
                raise DataError(f"unknown split {e.split!r} for {e.image}")
            for rel in (e.image, e.label):
                if not os.path.exists(self.path(rel)):
                    raise DataError(f"missing file {rel}")
            image, label = self.load_pair(e)
            if image.shape[:2] != (self.channels, self.time_steps):
                raise DataError(f"{e.image}: (c, t) = {image.shape[:2]}, manifest says "
                                f"{(self.channels, self.time_steps)}")
            bad = (label != IGNORE_INDEX) & (label >= self.num_classes)
            if bad.any():
                raise DataError(f"{e.label}: label value {int(label[bad][0])} >= {self.num_classes}")

    def meta(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "channels": self.channels,
            "time_steps": self.time_steps,
            "patch_size": self.patch_size,
            "granularity": self.granularity,
            "fractions": self.fractions,
        }

    def save(self, path):
        """Write ``image,label,split`` CSV plus a ``.meta`` key = value sidecar."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["image", "label", "split"])
            for e in self.entries:
                w.writerow([e.image, e.label, e.split])
        cfgio.write_config(self.meta(), meta_path(path))

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        if not os.path.exists(path):
            raise DataError(f"manifest {path} not found")
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if rows and set(rows[0]) != {"image", "label", "split"}:
            raise DataError(f"{path}: expected columns image,label,split")
        entries = [Entry(r["image"], r["label"], r["split"]) for r in rows]
        mp = meta_path(path)
        if not os.path.exists(mp):
            raise DataError(f"manifest metadata {mp} not found")
        meta = cfgio.read_config(mp)
        return cls(
            root=os.path.dirname(os.path.abspath(path)),
            entries=entries,
            num_classes=cfgio.to_int("num_classes", meta["num_classes"]),
            channels=cfgio.to_int("channels", meta["channels"]),
            time_steps=cfgio.to_int("time_steps", meta["time_steps"]),
            patch_size=cfgio.to_int("patch_size", meta.get("patch_size", "256")),
            granularity=meta.get("granularity", "image"),
            fractions=cfgio.to_float_list("fractions", meta.get("fractions", "0.6,0.2,0.2")),
        )


def meta_path(path) -> str:
    root, _ = os.path.splitext(path)
    return root + ".meta"


# -- padding and tiling -------------------------------------------------------

def padded_extent(n, patch):
    return math.ceil(n / patch) * patch


def tile_patches(image, label, patch=256):
    """Pad to patch multiples and cut a row-major grid of disjoint patches.

    Image padding is zero; label padding is ``IGNORE_INDEX``. Returns a list
    of ``(image_patch, label_patch, (row, col))``.
    """
    h, w = label.shape
    if image.shape[-2:] != (h, w):
        raise DataError(f"image {image.shape[-2:]} and label {(h, w)} disagree")
    ph, pw = padded_extent(h, patch), padded_extent(w, patch)
    image = pad_spatial_zero(image, ph, pw)
    label = pad_spatial_zero(label, ph, pw, fill=IGNORE_INDEX)
    out = []
    for r in range(ph // patch):
        for c in range(pw // patch):
            ys, xs = slice(r * patch, (r + 1) * patch), slice(c * patch, (c + 1) * patch)
            out.append((image[..., ys, xs], label[ys, xs], (r, c)))
    return out


def untile(patches, height, width):
    """Reassemble ``(patch, (row, col))`` pairs and crop to ``(height, width)``."""
    patches = list(patches)
    if not patches:
        raise DataError("no patches to reassemble")
    size = patches[0][0].shape[-1]
    rows, cols = padded_extent(height, size) // size, padded_extent(width, size) // size
    first = patches[0][0]
    canvas = np.zeros(first.shape[:-2] + (rows * size, cols * size), dtype=first.dtype)
    seen = set()
    for patch, (r, c) in patches:
        canvas[..., r * size:(r + 1) * size, c * size:(c + 1) * size] = patch
        seen.add((r, c))
    for r in range(rows):
        for c in range(cols):
            if (r, c) not in seen:
                raise DataError(f"missing patch at grid cell (row={r}, col={c})")
    return canvas[..., :height, :width]


def read_rects(path):
    """Rectangles ``x0,y0,x1,y1`` (half-open pixel bounds), one per CSV row."""
    rects = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            if row[0].strip() == "x0":
                continue
            if len(row) != 4:
                raise DataError(f"{path}: mask rows need x0,y0,x1,y1")
            rects.append(tuple(int(v) for v in row))
    return rects


def apply_region_mask(label, rects, keep="inside"):
    """Ignore pixels outside (``keep='inside'``) or inside the rectangles."""
    inside = np.zeros(label.shape, dtype=bool)
    for x0, y0, x1, y1 in rects:
        inside[y0:y1, x0:x1] = True
    out = label.copy()
    out[~inside if keep == "inside" else inside] = IGNORE_INDEX
    return out


# -- splits --------------------------------------------------------------------

def split_counts(n, fractions=(0.6, 0.2, 0.2)):
    n_train = int(math.floor(fractions[0] * n + 1e-9))
    n_val = int(math.floor(fractions[1] * n + 1e-9))
    return n_train, n_val, n - n_train - n_val


def split_dataset(manifest: DatasetManifest, fractions=(0.6, 0.2, 0.2), seed=0,
                  granularity=None) -> DatasetManifest:
    """Seeded shuffle, then contiguous train/val/test assignment."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-6 or min(fractions) < 0:
        raise DataError(f"fractions must be three non-negative values summing to 1, got {fractions}")
    n = len(manifest.entries)
    if n < 3:
        raise DataError(f"need at least 3 entries to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_train, n_val, _ = split_counts(n, fractions)
    entries = [replace(e) for e in manifest.entries]
    for rank, idx in enumerate(order):
        entries[idx].split = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
    return replace(manifest, entries=entries, fractions=fractions,
                   granularity=granularity or manifest.granularity)


# -- augmentation --------------------------------------------------------------

AUGMENTATIONS = ("hflip", "vflip", "color_enhance", "gaussian_blur", "random_noise")


@dataclass
class AugmentSpec:
    transforms: tuple = AUGMENTATIONS
    prob: float = 0.5
    blur_sigma: tuple = (0.5, 1.5)
    noise_std: tuple = (0.0, 0.05)  # fraction of the image's dynamic range
    gain: tuple = (0.9, 1.1)
    seed: int = 0

    def __post_init__(self):
        unknown = set(self.transforms) - set(AUGMENTATIONS)
        if unknown:
            raise DataError(f"unknown augmentation {sorted(unknown)[0]!r}")


def hflip(image, label):
    return image[..., ::-1].copy(), label[..., ::-1].copy()


def vflip(image, label):
    return image[..., ::-1, :].copy(), label[..., ::-1, :].copy()


def augment(image, label, spec: AugmentSpec, rng: np.random.Generator):
    """Apply each enabled transform with probability ``spec.prob``.

    Flips move image and label together; photometric transforms touch the
    image only. ``rng`` is consumed in a fixed order so results depend only
    on its state.
    """
    image = image.astype(np.float32, copy=True)
    for name in AUGMENTATIONS:
        fire = rng.random() < spec.prob
        if name not in spec.transforms or not fire:
            continue
        if name == "hflip":
            image, label = hflip(image, label)
        elif name == "vflip":
            image, label = vflip(image, label)
        elif name == "color_enhance":
            g = rng.uniform(*spec.gain, size=image.shape[0]).astype(np.float32)
            image *= g.reshape(-1, *([1] * (image.ndim - 1)))
        elif name == "gaussian_blur":
            sigma = rng.uniform(*spec.blur_sigma)
            if sigma > 0:
                axes = (0,) * (image.ndim - 2) + (sigma, sigma)
                image = ndimage.gaussian_filter(image, sigma=axes, mode="reflect")
        elif name == "random_noise":
            std = rng.uniform(*spec.noise_std) * float(image.max() - image.min())
            if std > 0:
                image = image + rng.normal(0.0, std, size=image.shape).astype(np.float32)
    return image, label


# -- synthetic datasets --------------------------------------------------------

def _palette(k, channels):
    colors = []
    for i in range(k):
        rgb = colorsys.hsv_to_rgb(i / k, 0.8, 0.9 if i % 2 else 0.6)
        extra = [0.25 + 0.5 * ((i * (j + 2)) % k) / max(1, k - 1) for j in range(channels - 3)]
        colors.append(list(rgb)[:channels] + extra)
    return np.array(colors, dtype=np.float32)


def _write_pairs(out_dir, images, labels, prefix):
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i, (img, lbl) in enumerate(zip(images, labels)):
        img_name, lbl_name = f"{prefix}{i:04d}.tns", f"{prefix}{i:04d}_lbl.tns"
        save_tensor(img, os.path.join(out_dir, img_name))
        save_tensor(lbl, os.path.join(out_dir, lbl_name))
        entries.append(Entry(img_name, lbl_name, "train"))
    return entries


def synth_shapes(out_dir, num_images=8, size=64, num_classes=4, seed=0, channels=3,
                 noise=0.02, manifest_name="manifest.csv") -> DatasetManifest:
    """Colored rectangles and discs on a class-0 background.

    Each class has its own color, so pixels are separable by color alone.
    """
    if num_classes < 2:
        raise DataError("synth_shapes needs at least 2 classes")
    rng = np.random.default_rng(seed)
    palette = _palette(num_classes, channels)
    yy, xx = np.mgrid[:size, :size]
    images, labels = [], []
    for _ in range(num_images):
        label = np.zeros((size, size), dtype=np.uint16)
        classes = list(range(1, num_classes)) + list(rng.integers(1, num_classes, size=2))
        for cls in classes:
            cy, cx = rng.integers(0, size, size=2)
            r = rng.integers(size // 10 + 1, size // 4 + 2)
            if rng.random() < 0.5:
                mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
            else:
                rh = rng.integers(size // 10 + 1, size // 4 + 2)
                mask = (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= rh)
            label[mask] = cls
        image = palette[label].transpose(2, 0, 1)[:, None]
        image = image + rng.normal(0, noise, size=image.shape).astype(np.float32)
        images.append(image.astype(np.float32))
        labels.append(label)
    entries = _write_pairs(out_dir, images, labels, "shape")
    manifest = DatasetManifest(os.path.abspath(out_dir), entries, num_classes, channels, 1,
                               patch_size=size)
    manifest = split_dataset(manifest, seed=seed) if num_images >= 3 else manifest
    manifest.save(os.path.join(out_dir, manifest_name))
    return manifest


def temporal_orders(t, seed=0):
    """Frame values of the rising ramp and its fixed shuffled order."""
    ramp = np.linspace(0.0, 1.0, t, dtype=np.float32)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(t)
    while np.array_equal(perm, np.arange(t)):
        perm = rng.permutation(t)
    return ramp, ramp[perm]


def synth_temporal(out_dir, num_images=20, size=32, t=4, seed=0, channels=4, block=4,
                   noise=0.1, manifest_name="manifest.csv") -> DatasetManifest:
    """Two classes with identical per-pixel temporal statistics.

    Class 0 pixels follow a rising ramp, class 1 pixels the same frame
    values in a fixed shuffled order; both get i.i.d. Gaussian noise. Mean
    and variance over time match, so only the temporal order separates them.
    Labels are square blocks assigned exactly half to each class, which
    leaves no spatial cue.
    """
    if t < 3:
        raise DataError("synth_temporal needs t >= 3")
    if size % block:
        raise DataError(f"size {size} must be a multiple of block {block}")
    rng = np.random.default_rng(seed)
    orders = np.stack(temporal_orders(t, seed))  # (2, t)
    gains = np.linspace(1.0, 0.5, channels, dtype=np.float32)
    nb = size // block
    images, labels = [], []
    for _ in range(num_images):
        cells = np.zeros(nb * nb, dtype=np.uint16)
        cells[rng.permutation(nb * nb)[: nb * nb // 2]] = 1
        label = np.kron(cells.reshape(nb, nb), np.ones((block, block), dtype=np.uint16))
        series = orders[label]  # (h, w, t)
        image = gains[:, None, None, None] * series.transpose(2, 0, 1)[None]
        image = image + rng.normal(0, noise, size=image.shape)
        images.append(image.astype(np.float32))
        labels.append(label.astype(np.uint16))
    entries = _write_pairs(out_dir, images, labels, "seq")
    manifest = DatasetManifest(os.path.abspath(out_dir), entries, 2, channels, t, patch_size=size)
    manifest = split_dataset(manifest, seed=seed) if num_images >= 3 else manifest
    manifest.save(os.path.join(out_dir, manifest_name))
    return manifest
