"""Masked networks in five minutes.

Build a small biasless conv net, draw its fixed random parameters, carve a
subnetwork out of it with a binary mask extracted from score tensors, and
check the analytic gradient against finite differences.
"""

import numpy as np

from gossipmask import (desk_arch, extract, finite_diff_check, forward,
                        group_lasso_value, init_params, loss_and_grad_v,
                        retained_count)

arch = desk_arch(input_shape=(3, 8, 8), num_classes=4, conv_channels=(16, 32),
                 hidden=32)
print("layers:", [l.kind for l in arch.layers])
print("parameter shapes:", arch.param_shapes())
print("total parameters:", arch.param_count())

# the shared network: fixed, uniform on [-1, 1], never trained
w = init_params(arch, seed=7)

# score tensors play the role of trainable importance; the mask keeps the
# top 30% magnitudes per layer, then zeroes starved output filters
rng = np.random.default_rng(0)
z = {idx: rng.uniform(-1, 1, shape) for idx, shape in arch.param_shapes().items()}
masks = extract(z, r=0.3, min_nonzero=2)
for idx, m in masks.items():
    kept = int(m.sum())
    print(f"layer {idx}: kept {kept}/{m.size} "
          f"(cap {retained_count(0.3, m.size)})")

# forward pass of the pruned subnetwork
x = rng.random((5, 3, 8, 8))
logits, _ = forward(arch, w, masks, x)
print("logits shape:", logits.shape)

# gradients are taken w.r.t. the effective parameters v = w * m
y = rng.integers(0, 4, 5)
loss, grad_v = loss_and_grad_v(arch, w, masks, x, y)
print(f"loss {loss:.4f}; gradient tensors: {[g.shape for g in grad_v.values()]}")

# sanity: finite differences on the first conv layer
v = {idx: w[idx] * masks[idx] for idx in w}


def fn(t):
    probe = dict(v)
    probe[0] = t
    l, g = loss_and_grad_v(arch, probe, None, x, y)
    return l, g[0]


err = finite_diff_check(fn, v[0], step=1e-5, num_coords=20)
print(f"max relative error vs central differences: {err:.2e}")

print("group-lasso penalty of the scores:",
      round(group_lasso_value(z, lam=0.001), 6))
