"""Strip-wise multi-head self-attention.

Horizontal strips are the H rows of a (N, D, H, W) feature map (each strip is
1 x W x D); vertical strips are its W columns (each H x 1 x D).

* Intra-strip attention treats every pixel of a strip as a token and attends
  within that strip only: H score matrices of W x W per head (horizontal) and
  W matrices of H x H (vertical).
* Inter-strip attention flattens each whole strip into a single token and
  attends across strips: one H x H matrix per head (horizontal), one W x W
  (vertical).

Query/key/value projections are bias-free 1x1 convolutions whose output
channels are grouped by head (head ``j`` owns channels ``j*D/m:(j+1)*D/m``).
Every attention routine can report an :class:`AttentionStats` describing
what it actually allocated.
"""

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError
from .init import trunc_normal
from .tensor import Tensor

PROJ_STD = 0.02


@dataclass
class AttentionStats:
    """Allocation counters for one attention invocation.

    ``score_entries`` counts attention-weight scalars materialized (summed
    over the batch). ``peak_activation_elements`` is the number of elements
    live at the widest point of the attention computation: the projected
    queries, keys and values, the raw scores, the softmax weights and the
    attended output.
    """

    score_entries: int = 0
    peak_activation_elements: int = 0

    def merge(self, other: "AttentionStats") -> "AttentionStats":
        return AttentionStats(
            self.score_entries + other.score_entries,
            max(self.peak_activation_elements, other.peak_activation_elements),
        )


@dataclass(frozen=True)
class AttentionConfig:
    channels: int
    heads: int = 5
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.channels < 2 or self.channels % 2:
            raise ConfigurationError(f"channels must be a positive even integer, got {self.channels}")
        if self.heads < 1 or self.branch_dim % self.heads:
            raise ConfigurationError(
                f"heads={self.heads} must divide the branch width D={self.branch_dim}"
            )
        if self.mlp_ratio < 1:
            raise ConfigurationError(f"mlp_ratio must be >= 1, got {self.mlp_ratio}")

    @property
    def branch_dim(self):
        return self.channels // 2

    @property
    def head_dim(self):
        return self.branch_dim // self.heads

    def strip_token_widths(self, height, width):
        """Inter-strip token widths (horizontal, vertical) before the head split."""
        return width * self.branch_dim, height * self.branch_dim


@dataclass
class ProjectionWeights:
    """Query, key and value projections of one branch as (D, D, 1, 1) kernels."""

    query: Tensor
    key: Tensor
    value: Tensor

    @property
    def dim(self):
        return self.query.shape[0]

    @classmethod
    def from_mapping(cls, params: Mapping[str, Tensor], prefix: str):
        return cls(params[f"{prefix}.query"], params[f"{prefix}.key"], params[f"{prefix}.value"])

    @classmethod
    def random(cls, dim, rng, dtype=np.float32, std=PROJ_STD):
        mats = [Tensor(trunc_normal(rng, (dim, dim, 1, 1), std, dtype=dtype)) for _ in range(3)]
        return cls(*mats)

    def head_matrices(self, heads):
        """Per-head (P_Q, P_K, P_V), each D x D/m, acting on row-vector tokens."""
        d = self.dim
        if d % heads:
            raise ConfigurationError(f"heads={heads} must divide D={d}")
        dh = d // heads
        out = []
        for j in range(heads):
            rows = slice(j * dh, (j + 1) * dh)
            out.append(tuple(t.data[rows, :, 0, 0].T for t in (self.query, self.key, self.value)))
        return out


def _check_heads(x, weights, heads):
    if x.ndim != 4:
        raise DimensionError(f"attention expects (N, D, H, W) input, got {x.shape}")
    d = x.shape[1]
    if weights.query.shape != (d, d, 1, 1):
        raise DimensionError(f"projection kernels must be ({d}, {d}, 1, 1), got {weights.query.shape}")
    if heads < 1 or d % heads:
        raise ConfigurationError(f"heads={heads} must divide D={d}")
    return d // heads


def _project(x, weights):
    return tuple(T.pointwise_conv(x, w) for w in (weights.query, weights.key, weights.value))


def _canonical_order(*parts):
    """Per-group token ordering defined by token content alone.

    Running the contractions on canonically ordered tokens makes every output
    independent of where tokens sat in the input, so permuting tokens
    permutes outputs bit-exactly (no floating-point reassociation).
    """
    content = np.concatenate([p.data for p in parts], axis=-1)  # (..., tokens, width)
    return np.lexsort(np.moveaxis(content, -1, 0)[::-1], axis=-1)[..., None]


def _attend(q, k, v, scale):
    kv_order = _canonical_order(k, v)
    k = T.take_along_axis(k, kv_order, axis=-2)
    v = T.take_along_axis(v, kv_order, axis=-2)
    q_order = _canonical_order(q)
    q = T.take_along_axis(q, q_order, axis=-2)
    scores = T.matmul(q, T.swapaxes(k, -1, -2)) * scale
    probs = T.softmax(scores, axis=-1)
    out = T.matmul(probs, v)
    out = T.take_along_axis(out, np.argsort(q_order, axis=-2), axis=-2)
    stats = AttentionStats(
        score_entries=scores.size,
        peak_activation_elements=q.size + k.size + v.size + scores.size + probs.size + out.size,
    )
    return out, stats


def _finish(out, stats, return_stats):
    return (out, stats) if return_stats else out


def _swap_hw(x):
    return T.swapaxes(x, 2, 3)


def intra_strip_attention_h(xh, weights: ProjectionWeights, heads, return_stats=False):
    """Multi-head attention among the W pixels of each horizontal strip."""
    dh = _check_heads(xh, weights, heads)
    n, d, h, w = xh.shape
    q, k, v = (
        t.reshape(n, heads, dh, h, w).permute(0, 3, 1, 4, 2) for t in _project(xh, weights)
    )  # (N, H, m, W, D/m)
    out, stats = _attend(q, k, v, 1.0 / np.sqrt(dh))
    out = out.permute(0, 2, 4, 1, 3).reshape(n, d, h, w)
    return _finish(out, stats, return_stats)


def intra_strip_attention_v(xv, weights: ProjectionWeights, heads, return_stats=False):
    """Multi-head attention among the H pixels of each vertical strip."""
    out, stats = intra_strip_attention_h(_swap_hw(xv), weights, heads, return_stats=True)
    return _finish(_swap_hw(out), stats, return_stats)


def inter_strip_attention_h(xh, weights: ProjectionWeights, heads, return_stats=False):
    """Multi-head attention across the H horizontal strips, one token per strip.

    Each head's token is the strip's W x D/m projected features flattened to
    width W*D/m; scores are scaled by 1/sqrt(W*D/m).
    """
    dh = _check_heads(xh, weights, heads)
    n, d, h, w = xh.shape
    q, k, v = (
        t.reshape(n, heads, dh, h, w).permute(0, 1, 3, 2, 4).reshape(n, heads, h, dh * w)
        for t in _project(xh, weights)
    )
    out, stats = _attend(q, k, v, 1.0 / np.sqrt(dh * w))
    out = out.reshape(n, heads, h, dh, w).permute(0, 1, 3, 2, 4).reshape(n, d, h, w)
    return _finish(out, stats, return_stats)


def inter_strip_attention_v(xv, weights: ProjectionWeights, heads, return_stats=False):
    """Multi-head attention across the W vertical strips, one token per strip."""
    out, stats = inter_strip_attention_h(_swap_hw(xv), weights, heads, return_stats=True)
    return _finish(_swap_hw(out), stats, return_stats)


DEFAULT_SCORE_CAP = 64 * 4096 * 4096


def vanilla_attention_reference(x, weights: ProjectionWeights, heads, return_stats=False,
                                max_score_entries=DEFAULT_SCORE_CAP):
    """Global multi-head attention over all H*W pixel tokens (the quadratic baseline)."""
    dh = _check_heads(x, weights, heads)
    n, d, h, w = x.shape
    tokens = h * w
    needed = n * heads * tokens * tokens
    if needed > max_score_entries:
        raise ConfigurationError(
            f"vanilla attention would allocate {needed} score entries (cap {max_score_entries})"
        )
    q, k, v = (
        t.reshape(n, heads, dh, tokens).permute(0, 1, 3, 2) for t in _project(x, weights)
    )
    out, stats = _attend(q, k, v, 1.0 / np.sqrt(dh))
    out = out.permute(0, 1, 3, 2).reshape(n, d, h, w)
    return _finish(out, stats, return_stats)


# ---------------------------------------------------------------- blocks
def split_branches(x, gamma, beta, weight, bias):
    """LayerNorm, a C -> C 1x1 conv, then split channels into (X^h, X^v)."""
    c = x.shape[1]
    if c % 2:
        raise ConfigurationError(f"split_branches needs an even channel count, got {c}")
    z = T.conv2d(T.layernorm(x, gamma, beta), weight, bias)
    d = c // 2
    return z[:, :d], z[:, d:]


def mlp_block(o_attn, params: Mapping[str, Tensor]):
    """LayerNorm -> per-pixel 2-layer GELU MLP -> residual -> CPE (3x3 depthwise + residual).

    ``params`` keys: ``norm.gamma``, ``norm.beta``, ``fc1.weight``, ``fc1.bias``,
    ``fc2.weight``, ``fc2.bias``, ``cpe.weight``, ``cpe.bias``.
    """
    y = T.layernorm(o_attn, params["norm.gamma"], params["norm.beta"])
    y = T.gelu(T.conv2d(y, params["fc1.weight"], params["fc1.bias"]))
    y = T.conv2d(y, params["fc2.weight"], params["fc2.bias"]) + o_attn
    return y + T.depthwise_conv2d(y, params["cpe.weight"], params["cpe.bias"])


class _Scoped(Mapping):
    def __init__(self, params, prefix):
        self._params = params
        self._prefix = prefix

    def __getitem__(self, key):
        return self._params[self._prefix + key]

    def __iter__(self):
        n = len(self._prefix)
        return (k[n:] for k in self._params if k.startswith(self._prefix))

    def __len__(self):
        return sum(1 for _ in self)


def _strip_block(x, params, heads, branch_h, branch_v, return_stats):
    if x.ndim != 4:
        raise DimensionError(f"attention blocks expect (N, C, H, W) input, got {x.shape}")
    xh, xv = split_branches(
        x, params["norm.gamma"], params["norm.beta"], params["in_proj.weight"], params["in_proj.bias"]
    )
    oh, sh = branch_h(xh, ProjectionWeights.from_mapping(params, "h"), heads, return_stats=True)
    ov, sv = branch_v(xv, ProjectionWeights.from_mapping(params, "v"), heads, return_stats=True)
    o_attn = T.conv2d(T.concat([oh, ov], axis=1), params["out_proj.weight"], params["out_proj.bias"]) + x
    out = mlp_block(o_attn, _Scoped(params, "mlp."))
    return _finish(out, sh.merge(sv), return_stats)


def intra_sa_block(x, params: Mapping[str, Tensor], heads, return_stats=False):
    """Intra-strip attention block; ``params`` layout is given by :func:`init_block_params`."""
    return _strip_block(x, params, heads, intra_strip_attention_h, intra_strip_attention_v, return_stats)


def inter_sa_block(x, params: Mapping[str, Tensor], heads, return_stats=False):
    """Inter-strip attention block; same parameter layout as :func:`intra_sa_block`."""
    return _strip_block(x, params, heads, inter_strip_attention_h, inter_strip_attention_v, return_stats)


def init_block_params(config: AttentionConfig, rng, dtype=np.float32):
    """Fresh parameters for one Intra-SA or Inter-SA block, keyed by local name."""
    c, d = config.channels, config.branch_dim
    hidden = c * config.mlp_ratio

    def proj(out_ch, in_ch):
        return trunc_normal(rng, (out_ch, in_ch, 1, 1), PROJ_STD, dtype=dtype)

    p = {
        "norm.gamma": np.ones(c, dtype),
        "norm.beta": np.zeros(c, dtype),
        "in_proj.weight": proj(c, c),
        "in_proj.bias": np.zeros(c, dtype),
    }
    for branch in ("h", "v"):
        for role in ("query", "key", "value"):
            p[f"{branch}.{role}"] = proj(d, d)
    p.update({
        "out_proj.weight": proj(c, c),
        "out_proj.bias": np.zeros(c, dtype),
        "mlp.norm.gamma": np.ones(c, dtype),
        "mlp.norm.beta": np.zeros(c, dtype),
        "mlp.fc1.weight": proj(hidden, c),
        "mlp.fc1.bias": np.zeros(hidden, dtype),
        "mlp.fc2.weight": proj(c, hidden),
        "mlp.fc2.bias": np.zeros(c, dtype),
        "mlp.cpe.weight": trunc_normal(rng, (c, 1, 3, 3), PROJ_STD, dtype=dtype),
        "mlp.cpe.bias": np.zeros(c, dtype),
    })
    return {k: Tensor(v, dtype=dtype) for k, v in p.items()}


# ------------------------------------------------------- closed-form counts
def predicted_score_entries(mechanism, height, width, heads, batch=1):
    """Closed-form attention-score counts for one branch pair (or the vanilla baseline)."""
    h, w, m = height, width, heads
    if mechanism == "intra":
        per = h * m * w * w + w * m * h * h
    elif mechanism == "inter":
        per = m * h * h + m * w * w
    elif mechanism == "vanilla":
        per = m * (h * w) ** 2
    else:
        raise ConfigurationError(f"unknown mechanism {mechanism!r}")
    return batch * per


def measure_score_entries(mechanism, height, width, heads, dim=None, rng=None, dtype=np.float64):
    """Run one mechanism on random input and return its :class:`AttentionStats`.

    ``intra`` and ``inter`` run both the horizontal and vertical branch.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    dim = 2 * heads if dim is None else dim
    x = Tensor(rng.uniform(-1, 1, (1, dim, height, width)), dtype=dtype)
    wts = ProjectionWeights.random(dim, rng, dtype=dtype)
    with T.no_grad():
        if mechanism == "vanilla":
            _, stats = vanilla_attention_reference(x, wts, heads, return_stats=True)
            return stats
        if mechanism == "intra":
            fh, fv = intra_strip_attention_h, intra_strip_attention_v
        elif mechanism == "inter":
            fh, fv = inter_strip_attention_h, inter_strip_attention_v
        else:
            raise ConfigurationError(f"unknown mechanism {mechanism!r}")
        _, sh = fh(x, wts, heads, return_stats=True)
        _, sv = fv(x, wts, heads, return_stats=True)
    return sh.merge(sv)
