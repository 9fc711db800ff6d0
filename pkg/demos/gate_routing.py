"""Train the query gate on the synthetic corpus and score a few agents.

Queries are hashed into a sparse vector, projected by a small MLP and
compared with K learned prototypes. The sharpened, top-p masked cosine
profile is the query's relevance vector.
"""
import numpy as np

from ppai.qagate import FeatureHashEncoder, argmax_accuracy, score, train_gate
from ppai.workload import cluster_query, split, synthetic_corpus

K = 8
encoder = FeatureHashEncoder(64, seed=0)
corpus = synthetic_corpus(K, 60, seed=0, encoder=encoder)
train, test = split(corpus, 0.25, seed=0)

gate, losses = train_gate(train, K, epochs=60, seed=0, encoder=encoder)
print(f"loss {losses[0]:.3f} -> {losses[-1]:.3f}")
print(f"held-out argmax accuracy {argmax_accuracy(gate, test):.4f}")

rng = np.random.default_rng(3)
text = cluster_query(2, rng)
rel = gate.relevance(text)
print(f"query {text!r}")
print("relevance", np.round(rel, 3))

# three agents: a specialist on cluster 2, a generalist, and a specialist elsewhere
caps = {
    "topic-2 expert": np.where(np.arange(K) == 2, 0.95, 0.3),
    "generalist": np.full(K, 0.6),
    "topic-5 expert": np.where(np.arange(K) == 5, 0.95, 0.3),
}
for name, cap in caps.items():
    print(f"  {name:15s} score {score(rel, cap):.3f}")
