"""The Stripformer encoder-decoder.

Data flow for an input of size H x W (H, W divisible by 4)::

    x ──FEB1──> e1 (C1, H/2) ──FEB2──> e2 (C2, H/4) ──conv3x3──> (C3, H/4)
      [Intra, Inter] x blocks_per_scale at C3
      ──convT──> (C2, H/2) ++ e1 ──1x1──> (C2, H/2)
      [Intra, Inter] x blocks_per_scale at C2
      ──convT──> (C1, H) ++ x ──1x1──> (C1, H)
      resblock x 2 ──conv3x3──> (3, H)  + x

``++`` is channel concatenation.
"""

from collections import OrderedDict
from collections.abc import Mapping
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from . import tensor as T
from .attention import AttentionConfig, init_block_params, inter_sa_block, intra_sa_block
from .checkpoint import read_checkpoint, write_checkpoint
from .errors import CheckpointError, ConfigurationError, InputSizeError
from .init import conv_weight, he_std, trunc_normal
from .tensor import Tensor


def resolve_heads(channels, heads):
    """Largest head count <= ``heads`` dividing the branch width ``channels // 2``."""
    d = channels // 2
    for m in range(min(heads, d), 0, -1):
        if d % m == 0:
            return m
    raise ConfigurationError(f"no valid head count for {channels} channels")


@dataclass(frozen=True)
class StripformerConfig:
    """Architecture hyperparameters.

    ``heads`` is the requested head count; each attention scale uses the
    largest count not exceeding it that divides that scale's branch width
    (see :meth:`heads_at`). ``out_init_std`` sets the output conv init;
    ``None`` means the usual fan-in scale 1 / sqrt(3 * fan_in).
    """

    base_channels: int = 32
    scale2_mult: int = 2
    bottleneck_mult: int = 4
    blocks_per_scale: int = 2
    heads: int = 5
    mlp_ratio: int = 4
    out_init_std: Optional[float] = None

    def __post_init__(self):
        for name in ("base_channels", "scale2_mult", "bottleneck_mult", "heads", "mlp_ratio"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.blocks_per_scale < 1:
            raise ConfigurationError(f"blocks_per_scale must be >= 1, got {self.blocks_per_scale}")
        for name, width in self.widths().items():
            if width % 2:
                raise ConfigurationError(f"channel width {name}={width} must be even")
        if self.out_init_std is not None and self.out_init_std < 0:
            raise ConfigurationError("out_init_std must be non-negative")

    def widths(self):
        c1 = self.base_channels
        return {"c1": c1, "c2": c1 * self.scale2_mult, "c3": c1 * self.bottleneck_mult}

    def heads_at(self, channels):
        return resolve_heads(channels, self.heads)

    def attention_config(self, channels):
        return AttentionConfig(channels, self.heads_at(channels), self.mlp_ratio)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


class ModelParams(Mapping):
    """Ordered registry of named parameter tensors plus the config that shaped them."""

    def __init__(self, config: StripformerConfig, tensors=None):
        self.config = config
        self._tensors = OrderedDict()
        for name, t in (tensors or {}).items():
            self[name] = t

    def __getitem__(self, name):
        return self._tensors[name]

    def __setitem__(self, name, value):
        if name in self._tensors:
            raise KeyError(f"parameter {name!r} registered twice")
        self._tensors[name] = value if isinstance(value, Tensor) else Tensor(value)

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def scope(self, prefix):
        """A read-only view of the parameters under ``prefix.``."""
        return _Scope(self._tensors, prefix + ".")

    def numel(self):
        return sum(t.size for t in self._tensors.values())

    def set_requires_grad(self, flag=True):
        for t in self._tensors.values():
            t.requires_grad = flag
        return self

    def zero_grad(self):
        for t in self._tensors.values():
            t.zero_grad()

    def copy(self):
        return ModelParams(self.config, {k: Tensor(t.data.copy()) for k, t in self.items()})

    def arrays(self):
        return OrderedDict((k, t.data) for k, t in self.items())


class _Scope(Mapping):
    def __init__(self, tensors, prefix):
        self._tensors = tensors
        self._prefix = prefix

    def __getitem__(self, key):
        return self._tensors[self._prefix + key]

    def __iter__(self):
        n = len(self._prefix)
        return (k[n:] for k in self._tensors if k.startswith(self._prefix))

    def __len__(self):
        return sum(1 for _ in self)

    def scope(self, prefix):
        return _Scope(self._tensors, self._prefix + prefix + ".")


def _scope(params, prefix):
    if hasattr(params, "scope"):
        return params.scope(prefix)
    return _Scope(params, prefix + ".")


# ----------------------------------------------------------------- blocks
def residual_block(x, params):
    """``x + conv3x3(relu(conv3x3(x)))``; keys ``conv1.*`` and ``conv2.*``."""
    y = T.relu(T.conv2d(x, params["conv1.weight"], params["conv1.bias"], padding=1))
    return x + T.conv2d(y, params["conv2.weight"], params["conv2.bias"], padding=1)


DOWN_PADDING = T.transpose_padding(3)


def feb(x, params):
    """Feature embedding block: stride-2 3x3 conv then three residual blocks."""
    h, w = x.shape[2:]
    if h % 2 or w % 2:
        raise InputSizeError(f"FEB needs even spatial extents, got {h}x{w}; pad the input first")
    y = T.conv2d(x, params["down.weight"], params["down.bias"], stride=2, padding=DOWN_PADDING)
    for i in range(3):
        y = residual_block(y, _scope(params, f"res{i}"))
    return y


def attention_stage(x, params, blocks, heads):
    """Strictly alternating Intra-SA -> Inter-SA, ``blocks`` pairs."""
    for i in range(blocks):
        x = intra_sa_block(x, _scope(params, f"block{i}.intra"), heads)
        x = inter_sa_block(x, _scope(params, f"block{i}.inter"), heads)
    return x


def required_padding(h, w, multiple=4):
    return (-h) % multiple, (-w) % multiple


def forward(blurred, params, config: StripformerConfig = None):
    """Deblur ``blurred`` (N, 3, H, W); H and W must be divisible by 4."""
    config = params.config if config is None else config
    if blurred.ndim != 4 or blurred.shape[1] != 3:
        raise InputSizeError(f"expected (N, 3, H, W) input, got {blurred.shape}")
    h, w = blurred.shape[2:]
    ph, pw = required_padding(h, w)
    if ph or pw:
        raise InputSizeError(
            f"input {h}x{w} is not divisible by 4; pad by {ph} rows and {pw} columns"
        )
    widths = config.widths()
    c2, c3 = widths["c2"], widths["c3"]
    blocks = config.blocks_per_scale

    e1 = feb(blurred, _scope(params, "feb1"))
    e2 = feb(e1, _scope(params, "feb2"))
    z = T.conv2d(e2, params["embed.weight"], params["embed.bias"], padding=1)
    z = attention_stage(z, _scope(params, "enc"), blocks, config.heads_at(c3))

    u = T.conv_transpose2d(z, params["up1.weight"], params["up1.bias"])
    u = T.conv2d(T.concat([u, e1], axis=1), params["merge1.weight"], params["merge1.bias"])
    u = attention_stage(u, _scope(params, "dec"), blocks, config.heads_at(c2))

    t = T.conv_transpose2d(u, params["up2.weight"], params["up2.bias"])
    t = T.conv2d(T.concat([t, blurred], axis=1), params["merge2.weight"], params["merge2.bias"])
    for i in range(2):
        t = residual_block(t, _scope(params, f"tail.res{i}"))
    r = T.conv2d(t, params["out.weight"], params["out.bias"], padding=1)
    return r + blurred


# ------------------------------------------------------------------- init
def _conv(p, prefix, rng, out_ch, in_ch, k, dtype, std=None):
    p[f"{prefix}.weight"] = conv_weight(rng, out_ch, in_ch, k, dtype, std=std)
    p[f"{prefix}.bias"] = np.zeros(out_ch, dtype)


# keeps activations from doubling in variance at every residual block
RES_BRANCH_SCALE = 0.1


def _resblock(p, prefix, rng, ch, dtype):
    _conv(p, f"{prefix}.conv1", rng, ch, ch, 3, dtype)
    _conv(p, f"{prefix}.conv2", rng, ch, ch, 3, dtype, std=RES_BRANCH_SCALE * he_std(ch * 9))


def _feb(p, prefix, rng, in_ch, out_ch, dtype):
    _conv(p, f"{prefix}.down", rng, out_ch, in_ch, 3, dtype)
    for i in range(3):
        _resblock(p, f"{prefix}.res{i}", rng, out_ch, dtype)


def _stage(p, prefix, rng, config, channels, dtype):
    acfg = config.attention_config(channels)
    for i in range(config.blocks_per_scale):
        for kind in ("intra", "inter"):
            for name, t in init_block_params(acfg, rng, dtype).items():
                p[f"{prefix}.block{i}.{kind}.{name}"] = t.data


def init_params(config: StripformerConfig = None, seed=0, dtype=np.float32, zero_final=False):
    """Freshly initialized parameters; ``zero_final`` zeroes the output conv."""
    config = StripformerConfig() if config is None else config
    rng = np.random.default_rng(seed)
    w = config.widths()
    c1, c2, c3 = w["c1"], w["c2"], w["c3"]
    p = OrderedDict()
    _feb(p, "feb1", rng, 3, c1, dtype)
    _feb(p, "feb2", rng, c1, c2, dtype)
    _conv(p, "embed", rng, c3, c2, 3, dtype)
    _stage(p, "enc", rng, config, c3, dtype)
    # transposed-conv kernels are (in, out, k, k); fan-in is in * k * k / 4 at stride 2
    p["up1.weight"] = trunc_normal(rng, (c3, c2, 3, 3), he_std(c3 * 9 / 4), dtype=dtype)
    p["up1.bias"] = np.zeros(c2, dtype)
    _conv(p, "merge1", rng, c2, c2 + c1, 1, dtype)
    _stage(p, "dec", rng, config, c2, dtype)
    p["up2.weight"] = trunc_normal(rng, (c2, c1, 3, 3), he_std(c2 * 9 / 4), dtype=dtype)
    p["up2.bias"] = np.zeros(c1, dtype)
    _conv(p, "merge2", rng, c1, c1 + 3, 1, dtype)
    for i in range(2):
        _resblock(p, f"tail.res{i}", rng, c1, dtype)
    out_std = config.out_init_std
    if out_std is None:
        out_std = 1.0 / np.sqrt(3.0 * c1 * 9)
    _conv(p, "out", rng, 3, c1, 3, dtype, std=out_std)
    if zero_final:
        p["out.weight"][...] = 0
    return ModelParams(config, p)


# --------------------------------------------------------------- persistence
FORMAT_KIND = "stripformer"


def save_params(path, params: ModelParams):
    header = {"kind": FORMAT_KIND, "config": params.config.to_dict()}
    write_checkpoint(path, params.arrays(), header)


def load_params(path, config: StripformerConfig = None):
    """Load a checkpoint; with ``config``, verify every tensor name and shape against it."""
    header, arrays = read_checkpoint(path)
    if header.get("kind") != FORMAT_KIND:
        raise CheckpointError(f"{path}: checkpoint kind {header.get('kind')!r} is not {FORMAT_KIND!r}")
    try:
        stored = StripformerConfig.from_dict(header["config"])
    except (KeyError, TypeError, ConfigurationError) as exc:
        raise CheckpointError(f"{path}: invalid config header: {exc}") from exc
    expected = init_params(config if config is not None else stored)
    check_compatible(expected.arrays(), arrays, path)
    return ModelParams(stored if config is None else config, arrays)


def check_compatible(expected, found, source="checkpoint"):
    for name, arr in expected.items():
        if name not in found:
            raise CheckpointError(f"{source}: missing tensor {name!r}")
        if found[name].shape != arr.shape:
            raise CheckpointError(
                f"{source}: tensor {name!r} has shape {found[name].shape}, expected {arr.shape}"
            )
    for name in found:
        if name not in expected:
            raise CheckpointError(f"{source}: unexpected tensor {name!r}")
