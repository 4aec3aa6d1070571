"""Finite-difference gradient sweeps over each block type, the full model and the losses."""

import numpy as np

from . import tensor as T
from .attention import AttentionConfig, init_block_params, inter_sa_block, intra_sa_block, mlp_block
from .errors import ConfigurationError
from .gradcheck import check_gradients
from .losses import FeatureExtractor, LossWeights, charbonnier, contrastive, edge_loss, loss_terms
from .model import ModelParams, StripformerConfig, feb, forward, init_params, residual_block
from .tensor import Tensor

BLOCKS = ("intra", "inter", "mlp", "feb", "resblock", "model", "losses")
DEFAULT_DIMS = {
    "intra": (1, 4, 3, 3),
    "inter": (1, 4, 3, 3),
    "mlp": (1, 4, 3, 3),
    "feb": (1, 3, 4, 4),
    "resblock": (1, 3, 4, 4),
    "model": (1, 3, 4, 4),
    "losses": (1, 3, 8, 8),
}
BLOCK_TOLERANCE = 1e-4
LOSS_TOLERANCE = 1e-5
FD_STEP = 1e-5


def _jitter(tensors, rng, scale=0.3):
    """Move parameters away from their (tiny or zero) init so every path carries gradient."""
    out = {}
    for name, arr in tensors.items():
        data = arr.data if isinstance(arr, Tensor) else np.asarray(arr)
        out[name] = Tensor(data + rng.normal(0.0, scale, data.shape), dtype=np.float64)
    return out


def _as_tensors(arrays):
    return {k: Tensor(v, dtype=np.float64) for k, v in arrays.items()}


def _input(dims, rng):
    return Tensor(rng.uniform(-1.0, 1.0, dims), dtype=np.float64)


def _check(f, x, params, rng, max_entries):
    tensors = dict(params, input=x)
    weights = {}

    def fn():
        out = f(x, params)
        if "r" not in weights:
            weights["r"] = rng.uniform(-1.0, 1.0, out.shape)
        return (out * Tensor(weights["r"], dtype=np.float64)).sum()

    return check_gradients(fn, tensors, eps=FD_STEP, max_entries=max_entries, rng=rng)


def _attention(kind, dims, rng, heads, max_entries):
    n, c, h, w = dims
    cfg = AttentionConfig(c, heads, mlp_ratio=2)
    params = _jitter(init_block_params(cfg, rng, np.float64), rng)
    block = intra_sa_block if kind == "intra" else inter_sa_block
    return _check(lambda x, p: block(x, p, heads), _input(dims, rng), params, rng, max_entries)


def _mlp(dims, rng, max_entries):
    c = dims[1]
    full = init_block_params(AttentionConfig(c, 1, mlp_ratio=2), rng, np.float64)
    params = _jitter({k[4:]: v for k, v in full.items() if k.startswith("mlp.")}, rng)
    return _check(mlp_block, _input(dims, rng), params, rng, max_entries)


def _conv_params(rng, prefix, out_ch, in_ch, k=3):
    return {f"{prefix}.weight": rng.normal(0.0, 0.5, (out_ch, in_ch, k, k)),
            f"{prefix}.bias": rng.normal(0.0, 0.1, out_ch)}


def _feb(dims, rng, max_entries):
    c = dims[1]
    out_ch = 2 * c
    params = _conv_params(rng, "down", out_ch, c)
    for i in range(3):
        params.update(_conv_params(rng, f"res{i}.conv1", out_ch, out_ch))
        params.update(_conv_params(rng, f"res{i}.conv2", out_ch, out_ch))
    return _check(feb, _input(dims, rng), _as_tensors(params), rng, max_entries)


def _resblock(dims, rng, max_entries):
    c = dims[1]
    params = dict(_conv_params(rng, "conv1", c, c), **_conv_params(rng, "conv2", c, c))
    return _check(residual_block, _input(dims, rng), _as_tensors(params), rng, max_entries)


def _model(dims, rng, heads, max_entries):
    config = StripformerConfig(base_channels=4, blocks_per_scale=1, heads=heads, mlp_ratio=2)
    base = init_params(config, seed=int(rng.integers(2 ** 31)), dtype=np.float64)
    params = _jitter(base, rng, 0.2)
    x = Tensor(rng.uniform(0.0, 1.0, dims), dtype=np.float64)

    def f(x, p):
        return forward(x, ModelParams(config, p))

    return _check(f, x, params, rng, max_entries)


def _losses(dims, rng):
    x = Tensor(rng.uniform(0.0, 1.0, dims), dtype=np.float64)
    s = rng.uniform(0.2, 0.8, dims)
    # r - s is a checkerboard of random magnitude in [0.05, 0.2]: both |r - s| and
    # |laplacian(r - s)| (>= 8 * 0.05 inside, >= 2 * 0.05 at borders) stay far above
    # the Charbonnier epsilon, where central differences at the fixed step would be
    # dominated by truncation error (third derivative ~ 1/eps^2)
    h, w = dims[-2:]
    checker = np.where((np.arange(h)[:, None] + np.arange(w)[None, :]) % 2, -1.0, 1.0)
    r = Tensor(s + checker * rng.uniform(0.05, 0.2, dims), dtype=np.float64)
    s = Tensor(s, dtype=np.float64)
    psi = FeatureExtractor(seed=int(rng.integers(2 ** 31)), widths=(4, 8), dtype=np.float64)
    weights = LossWeights()
    cases = {
        "charbonnier": lambda: charbonnier(r, s, weights.charbonnier_eps),
        "edge": lambda: edge_loss(r, s, weights.charbonnier_eps),
        "contrastive": lambda: contrastive(x, r, s, psi),
        "total": lambda: loss_terms(x, r, s, weights, psi)[0],
    }
    report = {}
    for name, fn in cases.items():
        report[name] = check_gradients(fn, {"r": r}, eps=FD_STEP)["r"]
    return report


def parse_dims(text):
    """``"1,4,3,3"`` -> ``(1, 4, 3, 3)``."""
    try:
        dims = tuple(int(v) for v in text.split(","))
    except ValueError as exc:
        raise ConfigurationError(f"dims must be four comma-separated integers, got {text!r}") from exc
    if len(dims) != 4 or min(dims) < 1:
        raise ConfigurationError(f"dims must be four positive integers N,C,H,W, got {text!r}")
    return dims


def run_block(block, dims=None, seed=0, heads=None, max_entries=None):
    """Run one sweep at 64-bit; returns ``{parameter group: max relative error}``.

    ``heads`` defaults to 2 for attention blocks (must divide C/2) and 1 for
    the full model; ``max_entries`` subsamples large tensors.
    """
    if block not in BLOCKS:
        raise ConfigurationError(f"unknown block {block!r}; choose from {', '.join(BLOCKS)}")
    dims = DEFAULT_DIMS[block] if dims is None else tuple(dims)
    rng = np.random.default_rng(seed)
    if block in ("intra", "inter"):
        return _attention(block, dims, rng, 2 if heads is None else heads, max_entries)
    if block == "mlp":
        return _mlp(dims, rng, max_entries)
    if block == "feb":
        return _feb(dims, rng, max_entries)
    if block == "resblock":
        return _resblock(dims, rng, max_entries)
    if block == "model":
        if dims[1] != 3:
            raise ConfigurationError("the full model takes 3-channel input")
        return _model(dims, rng, 1 if heads is None else heads, 8 if max_entries is None else max_entries)
    return _losses(dims, rng)


def tolerance(block):
    return LOSS_TOLERANCE if block == "losses" else BLOCK_TOLERANCE
