"""Binary masks from real-valued score tensors.

Each parameterized layer carries a trainable score tensor ``z``; its binary
mask keeps the entries of largest magnitude, layer by layer, at the agent's
retention ratio. A filter-zeroing rule then clears whole output filters
that retained too few entries, and a group-lasso term (the l2 norm of every
output-filter slice) drives the scores toward structured sparsity.

Masks are float64 arrays of 0.0/1.0 so they combine directly with
parameter tensors; the leading axis of every masked tensor indexes output
filters (conv: ``(O, I, H, W)``, linear: ``(O, I)``).
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "MaskState",
    "retained_count",
    "threshold_layer",
    "filter_zero",
    "extract",
    "extract_mask",
    "group_lasso_value",
    "group_lasso_grad",
]


def retained_count(r, n):
    """Entries kept by a layer of ``n`` entries at retention ratio ``r``.

    Half-up rounding, never below one entry.
    """
    if not 0.0 < r <= 1.0:
        raise ValueError(f"retention ratio must be in (0, 1], got {r}")
    return max(1, int(np.floor(r * n + 0.5)))


def threshold_layer(z, r):
    """Keep the ``retained_count(r, n)`` entries of largest magnitude.

    Ties at equal magnitude are broken by the lower flat index winning, so
    the result is deterministic and scale-invariant.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.size == 0:
        raise ValueError("empty score tensor")
    k = retained_count(r, z.size)
    order = np.argsort(-np.abs(z).ravel(), kind="stable")
    mask = np.zeros(z.size)
    mask[order[:k]] = 1.0
    return mask.reshape(z.shape)


def filter_zero(mask, min_nonzero):
    """Zero every output filter holding fewer than ``min_nonzero`` ones.

    Groups are slices along the leading axis. ``min_nonzero <= 0`` leaves
    the mask unchanged.
    """
    out = np.array(mask, dtype=np.float64)
    if min_nonzero <= 0:
        return out
    groups = out.reshape(out.shape[0], -1)
    groups[groups.sum(axis=1) < min_nonzero] = 0.0
    return out


def extract(tensors, r, min_nonzero=0):
    """Per-layer composition of thresholding and filter zeroing."""
    return {idx: filter_zero(threshold_layer(t, r), min_nonzero)
            for idx, t in sorted(tensors.items())}


@dataclass
class MaskState:
    """Score tensors plus the extraction parameters of one agent."""

    z: dict
    r: float
    min_nonzero: int = 0

    def __post_init__(self):
        if not 0.0 < self.r <= 1.0:
            raise ValueError(f"retention ratio must be in (0, 1], got {self.r}")
        if self.min_nonzero < 0:
            raise ValueError("min_nonzero must be nonnegative")


def extract_mask(state):
    """Binary mask set of a :class:`MaskState`."""
    return extract(state.z, state.r, state.min_nonzero)


def group_lasso_value(z, lam):
    """lam times the sum over layers and output filters of each filter
    slice's l2 norm."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    total = 0.0
    for idx in sorted(z):
        t = np.asarray(z[idx])
        total += np.sqrt((t.reshape(t.shape[0], -1) ** 2).sum(axis=1)).sum()
    return lam * total


def group_lasso_grad(z, lam):
    """Gradient of :func:`group_lasso_value`: lam * z_g / ||z_g|| per group,
    and the zero tensor for groups of zero norm (subgradient choice)."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    grads = {}
    for idx in sorted(z):
        t = np.asarray(z[idx], dtype=np.float64)
        norms = np.sqrt((t.reshape(t.shape[0], -1) ** 2).sum(axis=1))
        scale = np.zeros_like(norms)
        nz = norms > 0
        scale[nz] = lam / norms[nz]
        grads[idx] = t * scale.reshape((-1,) + (1,) * (t.ndim - 1))
    return grads
