"""Central finite-difference gradient checking."""

import numpy as np

from .tensor import Tensor, no_grad


def numerical_grad(fn, tensor, eps=1e-5, indices=None):
    """Central differences of scalar ``fn()`` w.r.t. entries of ``tensor``.

    ``tensor.data`` is perturbed in place and restored. ``indices`` is an
    iterable of flat indices; ``None`` means every entry.
    """
    flat = tensor.data.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    out = {}
    with no_grad():
        for i in indices:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(fn().data)
            flat[i] = orig - eps
            fm = float(fn().data)
            flat[i] = orig
            out[i] = (fp - fm) / (2.0 * eps)
    return out


def relative_error(analytic, numeric):
    """max|a - n| / max(max|a|, max|n|, 1e-6), computed over one parameter group."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-6)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(fn, tensors, eps=1e-5, max_entries=None, rng=None):
    """Compare autodiff and finite-difference gradients of scalar ``fn()``.

    Parameters
    ----------
    fn : callable
        Zero-argument function returning a scalar :class:`Tensor` built from
        ``tensors``.
    tensors : dict
        Name -> Tensor. Each is checked independently.
    max_entries : int, optional
        Randomly sample at most this many entries per tensor.

    Returns
    -------
    dict
        Name -> relative error (see :func:`relative_error`).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    for t in tensors.values():
        t.requires_grad = True
        t.zero_grad()
    loss = fn()
    loss.backward()
    report = {}
    for name, t in tensors.items():
        grad = t.grad if t.grad is not None else np.zeros_like(t.data)
        n = t.size
        if max_entries is not None and n > max_entries:
            idx = np.sort(rng.choice(n, size=max_entries, replace=False))
        else:
            idx = np.arange(n)
        num = numerical_grad(fn, t, eps, idx)
        report[name] = relative_error(grad.reshape(-1)[idx], [num[i] for i in idx])
    return report


def random_projection_loss(out: Tensor, rng):
    """Scalar ``sum(out * R)`` with a fixed random R, avoiding symmetric cancellations."""
    weights = Tensor(rng.uniform(-1.0, 1.0, size=out.shape), dtype=out.dtype)
    return (out * weights).sum()
