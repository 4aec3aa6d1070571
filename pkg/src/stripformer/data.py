"""Synthetic motion-blur pairs, procedural sharp images and paired augmentation.

Images here are float arrays of shape (3, H, W) with values in [0, 1].
"""

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, DimensionError

MAX_NOISE_SIGMA = 0.01


@dataclass
class ImagePair:
    """A blurred image X and its sharp ground truth S."""

    blurred: np.ndarray
    sharp: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.blurred.shape != self.sharp.shape:
            raise DimensionError(f"pair shapes differ: {self.blurred.shape} vs {self.sharp.shape}")
        if self.sharp.ndim != 3 or self.sharp.shape[0] != 3:
            raise DimensionError(f"pair images must be (3, H, W), got {self.sharp.shape}")
        for name in ("blurred", "sharp"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
                raise ConfigurationError(f"{name} image values must lie in [0, 1]")

    @property
    def shape(self):
        return self.sharp.shape


def motion_kernel(length, angle):
    """Normalized linear motion PSF of ``length`` pixels at ``angle`` radians.

    ``length`` samples spaced one pixel apart along the segment (centered on
    the kernel center) are splatted bilinearly. The angle is measured
    counter-clockwise from the +x (column) axis with rows growing downward.
    The kernel is odd-sized and point-symmetric about its center.
    """
    if length < 1:
        raise ConfigurationError(f"kernel length must be >= 1, got {length}")
    half = (length - 1) / 2.0
    t = np.arange(length) - half
    dx, dy = t * math.cos(angle), -t * math.sin(angle)
    r = int(math.ceil(half)) + 1
    size = 2 * r + 1
    k = np.zeros((size, size))
    for x, y in zip(r + dx, r + dy):
        x0, y0 = math.floor(x), math.floor(y)
        fx, fy = x - x0, y - y0
        for yy, xx, wgt in (
            (y0, x0, (1 - fx) * (1 - fy)),
            (y0, x0 + 1, fx * (1 - fy)),
            (y0 + 1, x0, (1 - fx) * fy),
            (y0 + 1, x0 + 1, fx * fy),
        ):
            if wgt > 0:
                k[yy, xx] += wgt
    k = np.where(k < 1e-12, 0.0, k)
    while k.shape[0] > 1 and not (k[0].any() or k[-1].any() or k[:, 0].any() or k[:, -1].any()):
        k = k[1:-1, 1:-1]
    return k / k.sum()


def blur_image(img, kernel):
    """Convolve each channel with ``kernel`` using half-sample symmetric borders."""
    return np.stack([ndimage.convolve(ch, kernel, mode="reflect") for ch in img])


def synth_blur(sharp, length, angle, rng=None, noise_sigma=0.0):
    """Blur ``sharp`` (3, H, W) with a linear motion kernel; returns an :class:`ImagePair`."""
    sharp = np.asarray(sharp, dtype=np.float64)
    h, w = sharp.shape[-2:]
    if not 1 <= length <= min(h, w) / 2:
        raise ConfigurationError(f"kernel length {length} must lie in [1, {min(h, w) / 2}]")
    if not 0.0 <= noise_sigma <= MAX_NOISE_SIGMA:
        raise ConfigurationError(f"noise sigma must lie in [0, {MAX_NOISE_SIGMA}], got {noise_sigma}")
    blurred = blur_image(sharp, motion_kernel(length, angle))
    if noise_sigma > 0:
        rng = np.random.default_rng() if rng is None else rng
        blurred = blurred + rng.normal(0.0, noise_sigma, blurred.shape)
    blurred = np.clip(blurred, 0.0, 1.0)
    prov = {"source": "synthetic", "length": length, "angle": float(angle), "noise_sigma": noise_sigma}
    return ImagePair(blurred, np.clip(sharp, 0.0, 1.0), prov)


# ------------------------------------------------------------ procedural images
def _convex_polygon_mask(yy, xx, rng, size):
    n = int(rng.integers(3, 7))
    cy, cx = rng.uniform(0, size, 2)
    radius = rng.uniform(0.1, 0.35) * size
    angles = np.sort(rng.uniform(0, 2 * np.pi, n))
    vy = cy + radius * np.sin(angles)
    vx = cx + radius * np.cos(angles)
    mask = np.ones_like(yy, dtype=bool)
    for i in range(n):
        y0, x0, y1, x1 = vy[i], vx[i], vy[(i + 1) % n], vx[(i + 1) % n]
        # interior lies on the left of each counter-clockwise edge (in x-right, y-down axes)
        mask &= (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0) >= 0
    return mask


def _stroke_mask(yy, xx, rng, size):
    y0, x0, y1, x1 = rng.uniform(0, size, 4)
    width = rng.uniform(0.8, 2.5)
    dy, dx = y1 - y0, x1 - x0
    t = np.clip(((yy - y0) * dy + (xx - x0) * dx) / max(dy * dy + dx * dx, 1e-9), 0, 1)
    return (yy - y0 - t * dy) ** 2 + (xx - x0 - t * dx) ** 2 <= width ** 2


def procedural_image(size, rng, n_shapes=6, n_strokes=4):
    """A sharp RGB test image: a color gradient with polygons, disks and thin strokes."""
    h, w = (size, size) if np.isscalar(size) else size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    c0, c1 = rng.uniform(0, 1, (2, 3))
    direction = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(direction) * xx + np.sin(direction) * yy) / max(h, w)
    ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-9)
    img = c0[:, None, None] * (1 - ramp) + c1[:, None, None] * ramp
    s = max(h, w)
    for _ in range(n_shapes):
        if rng.uniform() < 0.6:
            mask = _convex_polygon_mask(yy, xx, rng, s)
        else:
            cy, cx = rng.uniform(0, s, 2)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= (rng.uniform(0.05, 0.2) * s) ** 2
        img[:, mask] = rng.uniform(0, 1, (3, 1))
    for _ in range(n_strokes):
        img[:, _stroke_mask(yy, xx, rng, s)] = rng.uniform(0, 1, (3, 1))
    return np.clip(img, 0.0, 1.0)


def synthetic_pairs(count, size, rng, length_range=(3, 9), noise_sigma=0.0):
    """``count`` procedural images, each blurred at a random length and orientation."""
    pairs = []
    lo, hi = length_range
    hi = min(hi, size // 2)
    for _ in range(count):
        sharp = procedural_image(size, rng)
        length = int(rng.integers(lo, hi + 1))
        angle = float(rng.uniform(0, np.pi))
        pairs.append(synth_blur(sharp, length, angle, rng, noise_sigma))
    return pairs


# ---------------------------------------------------------------- augmentation
@dataclass(frozen=True)
class Augmentation:
    """Square crop at (top, left) of side ``size``, optional horizontal flip, then ``rot90`` quarter turns."""

    top: int
    left: int
    size: int
    flip: bool
    rot90: int

    def apply(self, img):
        out = img[..., self.top:self.top + self.size, self.left:self.left + self.size]
        if self.flip:
            out = out[..., ::-1]
        if self.rot90:
            out = np.rot90(out, self.rot90, axes=(-2, -1))
        return np.ascontiguousarray(out)


def draw_augmentation(shape, rng, crop=None, flip=True, rotate=True):
    h, w = shape[-2:]
    size = min(h, w) if crop is None else crop
    if size > min(h, w):
        raise ConfigurationError(f"crop {size} exceeds image size {h}x{w}")
    if crop is not None and crop % 4:
        raise ConfigurationError(f"crop size must be divisible by 4, got {crop}")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    do_flip = bool(rng.integers(0, 2)) if flip else False
    k = int(rng.integers(0, 4)) if rotate else 0
    return Augmentation(top, left, size, do_flip, k)


def augment(pair: ImagePair, rng, crop=None, flip=True, rotate=True):
    """Apply one random crop/flip/rotation identically to both images of ``pair``."""
    aug = draw_augmentation(pair.shape, rng, crop, flip, rotate)
    prov = dict(pair.provenance, augmentation=aug.__dict__.copy())
    return ImagePair(aug.apply(pair.blurred), aug.apply(pair.sharp), prov)


def center_crop(img, size):
    h, w = img.shape[-2:]
    top, left = (h - size) // 2, (w - size) // 2
    return np.ascontiguousarray(img[..., top:top + size, left:left + size])


# ------------------------------------------------------------------ file loading
def load_paired_folder(root):
    """Pairs from ``root/blur/*.png`` and ``root/sharp/*.png`` matched by filename."""
    from .imageio import read_png

    root = Path(root)
    blur_dir, sharp_dir = root / "blur", root / "sharp"
    if not blur_dir.is_dir() or not sharp_dir.is_dir():
        raise ConfigurationError(f"{root} must contain 'blur' and 'sharp' subdirectories")
    pairs = []
    for bpath in sorted(blur_dir.glob("*.png")):
        spath = sharp_dir / bpath.name
        if not spath.exists():
            raise ConfigurationError(f"no sharp counterpart for {bpath}")
        pairs.append(ImagePair(read_png(bpath), read_png(spath),
                               {"source": "files", "blurred": str(bpath), "sharp": str(spath)}))
    if not pairs:
        raise ConfigurationError(f"no PNG pairs found under {root}")
    return pairs
