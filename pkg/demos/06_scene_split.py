"""Group scenes that share places and split them without breaking any group."""

import warnings

from vprkit.dataset_graph import balanced_split, build_graph, compute_stats, connected_components
from vprkit.geometry import mine_pairs
from vprkit.io import format_stats_table
from vprkit.synth import CorpusSpec, generate_corpus

corpus = generate_corpus(CorpusSpec(n_segments=12), seed=2)
pairsets = mine_pairs(corpus.samples)
graph = build_graph(pairsets, corpus.samples)
comps = connected_components(graph)
print(len(graph.nodes), "scenes,", len(comps.components), "components,", len(comps.isolated), "isolated")

stats = [compute_stats(c, corpus.samples, pairsets) for c in comps.components]
with warnings.catch_warnings(record=True) as caught:
    warnings.simplefilter("always")
    split = balanced_split(comps.components, stats, test_fraction=0.3)
for w in caught:
    print("warning:", w.message)

print(format_stats_table({
    "train": compute_stats(split.train_scenes, corpus.samples, pairsets),
    "test": compute_stats(split.test_scenes, corpus.samples, pairsets),
}))
