"""Mine positives and negatives from camera poses, then label difficulty."""

import math

from vprkit import Condition, SampleMeta, image_position, mine_pairs

# two traversals of the same street, one by day and one by night,
# plus a rainy traversal of a street far away
samples = [
    SampleMeta("day-0", "day", (0.0, 0.0), 0.0, Condition.DAY, 0),
    SampleMeta("day-1", "day", (20.0, 0.0), 0.0, Condition.DAY, 1_500_000),
    SampleMeta("night-0", "night", (1.0, 0.8), 0.04, Condition.NIGHT, 0),
    SampleMeta("night-1", "night", (21.0, -0.5), -0.03, Condition.NIGHT, 1_500_000),
    SampleMeta("rain-0", "rain", (900.0, 0.0), math.pi / 2, Condition.DAY_RAIN, 0),
]

# the point the camera looks at sits 25 m ahead
for s in samples[:2]:
    print(s.sample_id, "looks at", image_position(s).img_pos)

for ps in mine_pairs(samples):
    label = ps.difficulty.label if ps.difficulty is not None else "no positive"
    print(f"{ps.query_id:8s} positives={ps.positive_ids} negatives={ps.negative_ids} -> {label}")

# day-1 is not a negative of day-0: frames 1.5 s apart in one scene are skipped
