"""Input checks shared by the estimator and the command line."""

import numpy as np

from .errors import ConfigurationError, DimensionError, InputSizeError


def check_image(img, name="image"):
    """Return ``img`` as a float64 (3, H, W) array with finite values in [0, 1]."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise DimensionError(f"{name} must have shape (3, H, W), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ConfigurationError(f"{name} values must lie in [0, 1]")
    return arr


def check_image_batch(images, name="X"):
    """Accept one (3, H, W) image, an (N, 3, H, W) array or a list of images; return a list."""
    if isinstance(images, np.ndarray) and images.ndim == 4:
        images = list(images)
    elif isinstance(images, np.ndarray) and images.ndim == 3:
        images = [images]
    else:
        images = list(images)
    if not images:
        raise ConfigurationError(f"{name} is empty")
    return [check_image(img, f"{name}[{i}]") for i, img in enumerate(images)]


def check_paired(x, y):
    xs, ys = check_image_batch(x, "X"), check_image_batch(y, "y")
    if len(xs) != len(ys):
        raise DimensionError(f"X has {len(xs)} images but y has {len(ys)}")
    for i, (a, b) in enumerate(zip(xs, ys)):
        if a.shape != b.shape:
            raise DimensionError(f"pair {i}: shapes differ, {a.shape} vs {b.shape}")
    return xs, ys


def check_min_size(img, minimum, name="image"):
    h, w = img.shape[-2:]
    if min(h, w) < minimum:
        raise InputSizeError(f"{name} is {h}x{w}; both sides must be at least {minimum}")


def check_positive_int(value, name):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
        raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")
    return int(value)
