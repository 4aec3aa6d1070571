"""Scikit-learn style wrapper around the deblurring network."""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from . import tensor as T
from .data import ImagePair
from .losses import LossWeights
from .metrics import psnr
from .model import StripformerConfig, forward, required_padding
from .training import TrainConfig, train_loop
from .validation import check_image_batch, check_min_size, check_paired, check_positive_int

PAD_MODE = "reflect"


def pad_to_multiple(img, multiple=4, mode=PAD_MODE):
    """Pad (..., H, W) on the bottom/right so both extents divide ``multiple``."""
    ph, pw = required_padding(*img.shape[-2:], multiple)
    if not (ph or pw):
        return img
    widths = [(0, 0)] * (img.ndim - 2) + [(0, ph), (0, pw)]
    if mode == "reflect" and (ph >= img.shape[-2] or pw >= img.shape[-1]):
        mode = "symmetric"
    return np.pad(img, widths, mode=mode)


def deblur(params, img, dtype=np.float32):
    """Run the network on one (3, H, W) image of any size; output is clipped to [0, 1]."""
    h, w = img.shape[-2:]
    x = pad_to_multiple(img)
    with T.no_grad():
        r = forward(T.Tensor(x[None], dtype=dtype), params)
    return np.clip(r.data[0, :, :h, :w].astype(np.float64), 0.0, 1.0)


class StripformerDeblurrer(BaseEstimator, RegressorMixin):
    """Fit on (blurred, sharp) image pairs; predict restores blurred images.

    ``X`` and ``y`` are lists (or stacked arrays) of (3, H, W) images in
    [0, 1]. ``score`` is the mean PSNR in dB over the given pairs.
    """

    def __init__(self, base_channels=32, blocks_per_scale=2, heads=5, steps=200, batch_size=2,
                 crop=64, lr_init=1e-4, lr_final=1e-7, lambda1=0.05, lambda2=0.0005,
                 augment=True, seed=0, dtype="float32"):
        self.base_channels = base_channels
        self.blocks_per_scale = blocks_per_scale
        self.heads = heads
        self.steps = steps
        self.batch_size = batch_size
        self.crop = crop
        self.lr_init = lr_init
        self.lr_final = lr_final
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.augment = augment
        self.seed = seed
        self.dtype = dtype

    def _configs(self):
        model = StripformerConfig(base_channels=check_positive_int(self.base_channels, "base_channels"),
                                  blocks_per_scale=check_positive_int(self.blocks_per_scale,
                                                                      "blocks_per_scale"),
                                  heads=check_positive_int(self.heads, "heads"))
        train = TrainConfig(steps=check_positive_int(self.steps, "steps"),
                            batch_size=check_positive_int(self.batch_size, "batch_size"),
                            crop=self.crop, lr_init=self.lr_init, lr_final=self.lr_final,
                            seed=self.seed, augment=self.augment, dtype=self.dtype)
        weights = LossWeights(lambda1=self.lambda1, lambda2=self.lambda2)
        return model, train, weights

    def fit(self, X, y):
        xs, ys = check_paired(X, y)
        model_cfg, train_cfg, weights = self._configs()
        for i, img in enumerate(xs):
            check_min_size(img, 4 if train_cfg.crop is None else train_cfg.crop, f"X[{i}]")
        dataset = [ImagePair(a, b, {"source": "fit", "index": i}) for i, (a, b) in enumerate(zip(xs, ys))]
        result = train_loop(dataset, model_cfg, train_cfg, weights)
        self.params_ = result.params
        self.log_ = result.log
        self.n_features_in_ = int(np.prod(xs[0].shape))
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        xs = check_image_batch(X)
        dtype = np.dtype(self.dtype)
        return [deblur(self.params_, img, dtype) for img in xs]

    def score(self, X, y, sample_weight=None):
        xs, ys = check_paired(X, y)
        values = [psnr(r, s) for r, s in zip(self.predict(xs), ys)]
        return float(np.average(values, weights=sample_weight))
