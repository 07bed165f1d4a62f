"""Six ways to pool a feature map into one vector."""

import numpy as np

from vprkit import aggregators as agg

rng = np.random.default_rng(0)
x = rng.uniform(0, 1, size=(4, 4, 8))  # h, w, channels

for variant in agg.Variant:
    params = agg.init_params(variant, x.shape, seed=1)
    d = agg.aggregate(variant, x, params)
    print(f"{variant.value:12s} dim={d.size:4d} first={d[:3].round(4)}")

# GeM slides from average pooling (p=1) towards max pooling as p grows
for p in (1, 3, 10, 100):
    print("p =", p, agg.gem(x, p)[:3].round(4))
print("max     ", x.max(axis=(0, 1))[:3].round(4))

# shuffling locations leaves SPoC alone but moves Conv-AP
perm = rng.permutation(16)
shuffled = x.reshape(16, 8)[perm].reshape(4, 4, 8)
cap = agg.init_params("convap", x.shape, seed=1)
print("spoc changed:  ", not np.allclose(agg.spoc(x), agg.spoc(shuffled)))
print("convap changed:", not np.allclose(agg.conv_ap(x, cap), agg.conv_ap(shuffled, cap)))
