"""Training a mask instead of weights, single agent.

The network's real parameters stay frozen at their random init; only the
score tensors move. The binary mask re-extracted after every step selects
a subnetwork, and that subnetwork learns the task.
"""

import numpy as np

from gossipmask import (desk_arch, extract, grad_z, init_params,
                        loss_and_grad_v, sample_batch, synth_generate)

R = 0.3          # retention: keep 30% of each layer
ETA = 0.1
STEPS = 150

train, test = synth_generate(4, (3, 8, 8), per_class=100, noise=0.1, seed=3)
arch = desk_arch((3, 8, 8), 4, (16, 32), 32)
w = init_params(arch, seed=11)

rng = np.random.default_rng(1)
z = {idx: rng.uniform(-1, 1, s) for idx, s in arch.param_shapes().items()}
masks = extract(z, R, 0)


def accuracy():
    from gossipmask import forward
    logits, _ = forward(arch, w, masks, test.features)
    return float((logits.argmax(axis=1) == test.labels).mean())


print(f"before training: accuracy {accuracy():.3f} (chance is 0.25)")
for step in range(1, STEPS + 1):
    idx = sample_batch(0, 0, step, len(train), 32)
    loss, grad_v = loss_and_grad_v(arch, w, masks, train.features[idx],
                                   train.labels[idx])
    for layer in z:
        z[layer] -= ETA * grad_z(grad_v[layer], w[layer], z[layer])
    masks = extract(z, R, 0)
    if step % 30 == 0:
        print(f"step {step:4d}: batch loss {loss:.4f} accuracy {accuracy():.3f}")

kept = sum(int(m.sum()) for m in masks.values())
print(f"final subnetwork keeps {kept}/{arch.param_count()} parameters "
      f"({kept / arch.param_count():.0%}); the weights never changed")
