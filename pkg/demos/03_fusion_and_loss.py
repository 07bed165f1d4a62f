"""Fuse two descriptors, score a mini-batch, and watch the hard-negative ratio move."""

import numpy as np

from vprkit.fusion import (FusionWeights, HardMinerState, Head, HeadBatch, LossConfig, MiniBatch, fuse,
                           multi_head_loss, select_negatives, triplet_loss, update_miner)

print(fuse([3.0, 0.0], [0.0, 4.0]))  # unit length after concatenation
print(fuse([3.0, 0.0], [0.0, 4.0], FusionWeights(1.0, 0.0), normalize=False))

print("triplet:", triplet_loss([0.0], [1.0], [0.2], margin=0.5))

rng = np.random.default_rng(3)
cfg = LossConfig(n_pos=1, n_neg=6)
heads = {}
for h, dim in zip(Head, (12, 8, 4)):
    heads[h] = HeadBatch(rng.normal(size=dim), rng.normal(size=(1, dim)), rng.normal(size=(6, dim)))
print("multi-head loss:", round(multi_head_loss(MiniBatch(heads), cfg), 4))

# half of the six negatives are the closest candidates, the rest are random
cands = [(f"n{i}", float(d)) for i, d in enumerate(rng.random(15))]
print(select_negatives(cands, 6, HardMinerState(hard_ratio=0.5), seed=0))

state = HardMinerState()
for loss in (1.0, 0.8, 0.7, 0.9, 0.9, 0.5):
    state = update_miner(state, loss)
    print(f"loss {loss:.1f} -> hard ratio {state.hard_ratio:.1f}")
