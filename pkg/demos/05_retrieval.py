"""Exact nearest-neighbour search and Recall@K split by difficulty."""

import numpy as np

from vprkit.geometry import Difficulty, PairSet
from vprkit.retrieval import DescriptorDB, format_table, recall_at_k, top_k

rng = np.random.default_rng(0)
places = rng.normal(size=(30, 16))
ids, rows, owner = [], [], []
for p in range(30):
    for j in range(3):
        ids.append(f"p{p:02d}-{j}")
        rows.append(places[p] + rng.normal(scale=0.6, size=16))
        owner.append(p)
db = DescriptorDB(ids, np.array(rows))

print(top_k(db.matrix[0], db, 3))

labels = [Difficulty.EASY, Difficulty.SEMI_HARD, Difficulty.HARD]
queries = []
for i, sid in enumerate(ids):
    positives = [o for o, p in zip(ids, owner) if p == owner[i] and o != sid]
    queries.append((db.matrix[i], PairSet(sid, positives, [], labels[i % 3])))

clean = recall_at_k(queries, db)
noisy_db = DescriptorDB(ids, db.matrix + rng.normal(scale=0.8, size=db.matrix.shape))
noisy = recall_at_k([(noisy_db.matrix[i], ps) for i, (_, ps) in enumerate(queries)], noisy_db)
print(format_table([("noisy", noisy), ("clean", clean)]))
