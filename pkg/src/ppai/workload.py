"""Synthetic task corpora and agent profiles used by the simulator and demos."""

from __future__ import annotations

import numpy as np

from .errors import EmptyQuery
from .qagate import one_hot

FILLER = tuple(
    "please explain how what why when the a of in for about using with given "
    "find show compute describe compare list which does can should would".split()
)


def cluster_query(cluster: int, rng: np.random.Generator, n_topic: int = 2, n_filler: int = 3) -> str:
    """One query from task cluster ``cluster``.

    Every query carries the cluster's marker token plus a few tokens from
    the cluster's private vocabulary and from a shared filler vocabulary.
    """
    words = [f"topic{cluster}"]
    words += [f"t{cluster}x{int(m)}" for m in rng.integers(0, 8, size=n_topic)]
    words += [FILLER[int(i)] for i in rng.integers(0, len(FILLER), size=n_filler)]
    order = rng.permutation(len(words))
    return " ".join(words[i] for i in order)


def encodable_query(cluster: int, rng: np.random.Generator, encoder=None) -> str:
    """Like :func:`cluster_query`, redrawing queries ``encoder`` cannot encode."""
    while True:
        text = cluster_query(cluster, rng)
        if encoder is None:
            return text
        try:
            encoder(text)
            return text
        except EmptyQuery:
            continue


def synthetic_corpus(k: int, n_per_cluster: int, seed: int, encoder=None) -> list[tuple[str, np.ndarray]]:
    """``k`` well-separated clusters with one-hot labels, interleaved by cluster.

    With ``encoder`` given, queries whose hashed features cancel are redrawn.
    """
    rng = np.random.default_rng(seed)
    ids = np.tile(np.arange(k), n_per_cluster)
    labels = one_hot(ids, k)
    return [(encodable_query(int(c), rng, encoder), labels[i]) for i, c in enumerate(ids)]


def split(examples: list, held_out: float, seed: int) -> tuple[list, list]:
    """Deterministic shuffled train / held-out split."""
    if not 0.0 < held_out < 1.0:
        raise ValueError("held_out must be a fraction in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(examples))
    n_test = max(1, int(round(held_out * len(examples))))
    test = [examples[i] for i in order[:n_test]]
    train = [examples[i] for i in order[n_test:]]
    return train, test


# Five heterogeneous agents over eight task clusters. Each cluster has a clear
# specialist and a near substitute, so routing trades accuracy for load.
HETEROGENEOUS_PROFILES = (
    (0.92, 0.88, 0.40, 0.35, 0.45, 0.40, 0.30, 0.86),
    (0.86, 0.90, 0.87, 0.30, 0.35, 0.45, 0.40, 0.35),
    (0.35, 0.40, 0.91, 0.89, 0.84, 0.30, 0.45, 0.40),
    (0.40, 0.30, 0.35, 0.85, 0.90, 0.88, 0.35, 0.45),
    (0.45, 0.35, 0.30, 0.40, 0.38, 0.86, 0.90, 0.91),
)
