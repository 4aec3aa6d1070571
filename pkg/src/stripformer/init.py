"""Seeded parameter initializers."""

import numpy as np


def trunc_normal(rng, shape, std, bound=2.0, dtype=np.float32):
    """Normal(0, std) samples redrawn until they fall within ``bound`` standard deviations."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return (out * std).astype(dtype)


def he_std(fan_in):
    return float(np.sqrt(2.0 / fan_in))


def conv_weight(rng, out_ch, in_ch, k, dtype=np.float32, std=None):
    """Truncated-normal conv kernel; He scaling unless ``std`` is given."""
    if std is None:
        std = he_std(in_ch * k * k)
    return trunc_normal(rng, (out_ch, in_ch, k, k), std, dtype=dtype)
