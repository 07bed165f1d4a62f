"""Visual-only versus fused retrieval on synthetic data where night images are corrupted."""

from vprkit.pipeline import proxy_experiment
from vprkit.retrieval import format_table
from vprkit.synth import CorpusSpec, generate_corpus

for corruption in (1.0, 0.1):
    corpus = generate_corpus(CorpusSpec(corruption=corruption), seed=0)
    visual, fused = proxy_experiment(corpus, variant="convap", dim=640)
    print(f"corruption {corruption}: {visual.counts['overall']} queries")
    print(format_table([("Conv-AP", visual), ("Conv-AP + struct", fused)]))
