"""8-bit RGB PNG input/output."""

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigurationError


def read_png(path):
    """Read a PNG as a float64 (3, H, W) array in [0, 1]; alpha is dropped."""
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise ConfigurationError(f"{path}: expected a PNG, got {im.format}")
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (OSError, UnidentifiedImageError) as exc:
        raise ConfigurationError(f"cannot read image {path}: {exc}") from exc
    return arr.transpose(2, 0, 1) / 255.0


def to_uint8(img):
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def write_png(path, img):
    """Write a (3, H, W) array in [0, 1] as an 8-bit RGB PNG."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(to_uint8(img).transpose(1, 2, 0))).save(path, format="PNG")


def quantize(img):
    """Round-trip through 8-bit storage."""
    return to_uint8(img).astype(np.float64) / 255.0
