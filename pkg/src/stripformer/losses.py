"""Charbonnier, edge and contrastive losses and their weighted combination."""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .checkpoint import read_checkpoint, write_checkpoint
from .errors import CheckpointError, ConfigurationError, DimensionError
from .init import conv_weight
from .tensor import Tensor

CONTRASTIVE_DELTA = 1e-7


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.05
    lambda2: float = 0.0005
    charbonnier_eps: float = 1e-3

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigurationError("loss weights must be non-negative")
        if self.charbonnier_eps <= 0:
            raise ConfigurationError("charbonnier_eps must be strictly positive")


def _same_shape(r, s, what):
    if r.shape != s.shape:
        raise DimensionError(f"{what}: shapes differ, {r.shape} vs {s.shape}")


def charbonnier(r, s, eps=1e-3):
    """Mean of sqrt((r - s)^2 + eps^2).

    Evaluated as eps * mean(sqrt((d / eps)^2 + 1)) so that r == s gives
    exactly eps: every term is then sqrt(1) = 1 with no rounding.
    """
    _same_shape(r, s, "charbonnier")
    d = (r - s) * (1.0 / eps)
    return T.sqrt(d * d + 1.0).mean() * eps


def laplacian(x):
    """Per-channel 3x3 Laplacian [[0,1,0],[1,-4,1],[0,1,0]] with edge-replicated borders."""
    xp = T.pad2d(x, 1, mode="edge")
    center = xp[..., 1:-1, 1:-1]
    return (
        xp[..., :-2, 1:-1] + xp[..., 2:, 1:-1] + xp[..., 1:-1, :-2] + xp[..., 1:-1, 2:]
        - center * 4.0
    )


def edge_loss(r, s, eps=1e-3):
    _same_shape(r, s, "edge_loss")
    if min(r.shape[-2:]) < 3:
        raise DimensionError(f"edge_loss needs at least 3x3 spatial extent, got {r.shape[-2:]}")
    return charbonnier(laplacian(r), laplacian(s), eps)


class FeatureExtractor:
    """Frozen convolutional feature map standing in for a pretrained network.

    Three stages of conv3x3 -> ReLU -> conv3x3 -> ReLU, with 2x average
    pooling between stages; the output is the last stage before pooling.
    Weights come from a seeded truncated normal and never change after
    construction. Gradients flow to the input only.
    """

    def __init__(self, seed=0, widths=(16, 32, 64), in_channels=3, dtype=np.float32, weights=None):
        self.seed = seed
        self.widths = tuple(widths)
        self.in_channels = in_channels
        if weights is None:
            rng = np.random.default_rng(seed)
            weights = {}
            prev = in_channels
            for i, w in enumerate(self.widths):
                for j, cin in enumerate((prev, w)):
                    weights[f"stage{i}.conv{j}.weight"] = conv_weight(rng, w, cin, 3, dtype)
                    weights[f"stage{i}.conv{j}.bias"] = np.zeros(w, dtype)
                prev = w
        self._weights = {}
        for name, arr in weights.items():
            arr = np.array(arr, dtype=dtype)
            arr.setflags(write=False)
            self._weights[name] = Tensor(arr)

    def __call__(self, x):
        y = x
        for i in range(len(self.widths)):
            if i:
                h, w = y.shape[-2:]
                # odd trailing rows/columns are dropped, as a floor-mode pool would
                y = T.avg_pool2d(y[..., : h - h % 2, : w - w % 2], 2)
            for j in range(2):
                y = T.relu(T.conv2d(y, self._weights[f"stage{i}.conv{j}.weight"],
                                    self._weights[f"stage{i}.conv{j}.bias"], padding=1))
        return y

    def min_input_size(self):
        return 2 ** (len(self.widths) - 1)

    def save(self, path):
        header = {"kind": "feature_extractor", "seed": self.seed, "widths": list(self.widths),
                  "in_channels": self.in_channels}
        write_checkpoint(path, {k: t.data for k, t in self._weights.items()}, header)

    @classmethod
    def from_file(cls, path, dtype=np.float32):
        """Load weights written by :meth:`save` (or any compatible conv stack)."""
        header, arrays = read_checkpoint(path)
        if header.get("kind") != "feature_extractor":
            raise CheckpointError(f"{path}: not a feature-extractor checkpoint")
        widths = tuple(header["widths"])
        ref = cls(widths=widths, in_channels=header.get("in_channels", 3))
        for name, t in ref._weights.items():
            if name not in arrays or arrays[name].shape != t.shape:
                raise CheckpointError(f"{path}: tensor {name!r} missing or misshapen")
        return cls(seed=header.get("seed"), widths=widths, in_channels=ref.in_channels,
                   dtype=dtype, weights=arrays)


def contrastive(x_blur, r, s, psi, delta=CONTRASTIVE_DELTA):
    """mean|psi(S) - psi(R)| / (mean|psi(X) - psi(R)| + delta); differentiable in ``r``."""
    _same_shape(r, s, "contrastive")
    _same_shape(r, x_blur, "contrastive")
    with T.no_grad():
        fs = psi(s.detach())
        fx = psi(x_blur.detach())
    fr = psi(r)
    num = T.tabs(fs - fr).mean()
    den = T.tabs(fx - fr).mean() + delta
    return num / den


def loss_terms(x, r, s, weights: LossWeights = None, psi=None):
    """Return ``(total, parts)``; ``parts`` maps l_char/l_edge/l_con to floats.

    The contrastive term is skipped (reported as 0) when ``lambda2 == 0``.
    """
    weights = LossWeights() if weights is None else weights
    l_char = charbonnier(r, s, weights.charbonnier_eps)
    l_edge = edge_loss(r, s, weights.charbonnier_eps)
    total = l_char + l_edge * weights.lambda1
    l_con_value = 0.0
    if weights.lambda2 > 0:
        if psi is None:
            raise ConfigurationError("a feature extractor is required when lambda2 > 0")
        l_con = contrastive(x, r, s, psi)
        total = total + l_con * weights.lambda2
        l_con_value = float(l_con.data)
    parts = {"l_char": float(l_char.data), "l_edge": float(l_edge.data), "l_con": l_con_value}
    return total, parts


def total_loss(x, r, s, weights: LossWeights = None, psi=None):
    """L_char + lambda1 * L_edge + lambda2 * L_con."""
    return loss_terms(x, r, s, weights, psi)[0]
