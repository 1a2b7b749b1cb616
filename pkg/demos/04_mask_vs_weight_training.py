"""Can a pruned random network match a trained one?

For each agent: train the full network by SGD, then go back to the same
random init and train only binary masks at several retention ratios. At
desk scale the mask-trained subnetworks reach the accuracy of the
weight-trained network, supporting mask-only collaboration.
"""

import numpy as np

from gossipmask import assign_labels, desk_arch, mask_vs_weight_verify, synth_generate

SEED = 0
train, test = synth_generate(4, (3, 8, 8), per_class=100, noise=0.1,
                             seed=[SEED, 7])
label_sets = assign_labels(2, 4, 2, seed=[SEED, 6])
shards = []
for labels in label_sets:
    tr = np.flatnonzero(np.isin(train.labels, list(labels)))
    te = np.flatnonzero(np.isin(test.labels, list(labels)))
    shards.append((train.features[tr], train.labels[tr],
                   test.features[te], test.labels[te]))

arch = desk_arch((3, 8, 8), 4, (16, 32), 32)
traces = mask_vs_weight_verify(arch, shards, r_values=(0.1, 0.3, 0.5), steps=300,
                      eta_weight=0.01, eta_mask=0.1, batch_size=32,
                      seed=SEED, eval_interval=3)

for agent, labels in enumerate(label_sets):
    print(f"\nagent {agent} (labels {labels}):")
    weight_trace = traces.weight[agent]
    print(f"  weight-trained: start {weight_trace[0][1]:.3f} "
          f"-> final {weight_trace[-1][1]:.3f}")
    for r in (0.1, 0.3, 0.5):
        trace = traces.mask[(agent, r)]
        ratio = trace[-1][1] / max(weight_trace[-1][1], 1e-9)
        print(f"  mask-trained r={r}: start {trace[0][1]:.3f} "
              f"-> final {trace[-1][1]:.3f} ({ratio:.0%} of weight-trained)")

print("\nmask curves oscillate more than weight curves; the update is")
print("inherently discrete: every step re-selects a subnetwork.")
steps = [s for s, _ in traces.mask[(0, 0.3)]][:12]
accs = [f"{a:.2f}" for _, a in traces.mask[(0, 0.3)]][:12]
print(f"first evaluations of agent 0 at r=0.3 (steps {steps[0]}..{steps[-1]}):")
print("  " + " ".join(accs))
