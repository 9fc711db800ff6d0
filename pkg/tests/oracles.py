"""Independent reference implementations used as test oracles.

These avoid the package's own helpers on purpose: plain Python loops,
lists and the standard library, so an agreement is evidence rather than
a tautology.
"""

from __future__ import annotations

import hashlib
import math
import random


# --------------------------------------------------------------------------
# encoder
# --------------------------------------------------------------------------

def tokens(text: str) -> list[bytes]:
    out, cur = [], []
    for ch in text.encode("utf-8"):
        c = chr(ch)
        if ch < 128 and c.isalnum():
            cur.append(c.lower())
        elif cur:
            out.append("".join(cur).encode("ascii"))
            cur = []
    if cur:
        out.append("".join(cur).encode("ascii"))
    return out


def encode(text: str, d: int, seed: int = 0) -> list[float]:
    vec = [0.0] * d
    key = seed.to_bytes(8, "little")
    for tok in tokens(text):
        h_bucket = hashlib.blake2b(tok, digest_size=8, key=key, person=b"ppai.bucket").digest()
        h_sign = hashlib.blake2b(tok, digest_size=8, key=key, person=b"ppai.sign").digest()
        bucket = int.from_bytes(h_bucket, "little") % d
        vec[bucket] += 1.0 if int.from_bytes(h_sign, "little") % 2 == 1 else -1.0
    norm = math.sqrt(sum(v * v for v in vec))
    return [v / norm for v in vec]


# --------------------------------------------------------------------------
# projector, cosine, masking
# --------------------------------------------------------------------------

def matvec(m, v):
    return [sum(float(m[i][j]) * float(v[j]) for j in range(len(v))) for i in range(len(m))]


def project(w1, b1, w2, b2, q):
    hidden = [max(0.0, h + float(b)) for h, b in zip(matvec(w1, q), b1)]
    return [o + float(b) for o, b in zip(matvec(w2, hidden), b2)]


def cosine(u, v) -> float:
    dot = sum(float(a) * float(b) for a, b in zip(u, v))
    return dot / (math.sqrt(sum(float(a) ** 2 for a in u)) * math.sqrt(sum(float(b) ** 2 for b in v)))


def mask(raw, alpha: float, p: float):
    k = len(raw)
    n_keep = math.ceil(round(p * k, 9))
    clamped = [max(0.0, float(r)) for r in raw]
    order = sorted(range(k), key=lambda i: (-clamped[i], i))[:n_keep]
    total = sum(clamped[i] ** alpha for i in order)
    out = [0.0] * k
    for i in order:
        out[i] = clamped[i] ** alpha / total if total > 0 else 1.0 / n_keep
    return out


def kl(y, logits) -> float:
    m = max(logits)
    log_z = m + math.log(sum(math.exp(z - m) for z in logits))
    return sum(t * (math.log(t) - (z - log_z)) for t, z in zip(y, logits) if t > 0)


# --------------------------------------------------------------------------
# beliefs and delegation cost
# --------------------------------------------------------------------------

def bayes(prior: dict, lambda_obs: float, mu_obs: float, sigma: float) -> dict:
    """prior maps (mu, lam) -> mass."""
    w = {}
    for (mu, lam), m in prior.items():
        w[(mu, lam)] = m * math.exp(-((lambda_obs - lam) ** 2) / (2 * sigma**2)) \
            * math.exp(-((mu_obs - mu) ** 2) / (2 * sigma**2))
    total = sum(w.values())
    return {c: v / total for c, v in w.items()}


def expected_load(belief: dict, delta: float) -> float:
    total = 0.0
    for (mu, lam), m in belief.items():
        rho = lam / mu + delta * (lam - mu)
        total += m * min(1.0, max(0.0, rho))
    return min(1.0, max(0.0, total))


# --------------------------------------------------------------------------
# congestion games
# --------------------------------------------------------------------------

def congestion_utility(base, a, b, z, i) -> float:
    j = z[i]
    n_j = sum(1 for zz in z if zz == j)
    return base[i][j] - (a[j] * n_j + b[j])


def congestion_potential(base, a, b, z) -> float:
    return sum(congestion_utility(base, a, b, z, i) for i in range(len(z)))


def enumerate_profiles(n_users: int, n_agents: int):
    if n_users == 0:
        yield ()
        return
    for rest in enumerate_profiles(n_users - 1, n_agents):
        for j in range(n_agents):
            yield rest + (j,)


def affine_poa(a, b, n_users: int) -> float:
    """Worst pure-Nash total cost over optimal total cost, by brute force."""
    m = len(a)

    def cost(z):
        return sum(a[z[i]] * sum(1 for x in z if x == z[i]) + b[z[i]] for i in range(n_users))

    def nash(z):
        for i in range(n_users):
            here = a[z[i]] * sum(1 for x in z if x == z[i]) + b[z[i]]
            for j in range(m):
                if j == z[i]:
                    continue
                there = a[j] * (sum(1 for x in z if x == j) + 1) + b[j]
                if there < here:
                    return False
        return True

    profiles = list(enumerate_profiles(n_users, m))
    worst = max(cost(z) for z in profiles if nash(z))
    opt = min(cost(z) for z in profiles)
    return worst / opt


# --------------------------------------------------------------------------
# gossip: the same protocol rewritten with sets, sharing the RNG call sequence
# --------------------------------------------------------------------------

def epidemic_coverage(n: int, fanout: int, start: int, rng, patience: int, max_rounds: int = 200) -> list[int]:
    """Informed-node count after every round for one record pushed from ``start``."""
    informed = {start}
    pushing = {start: 0}  # node -> consecutive fruitless pushes
    history = []
    for _ in range(max_rounds):
        if not pushing:
            break
        newly = []
        fruitful = set()
        for node in sorted(pushing):
            picks = rng.choice(n - 1, size=fanout, replace=False)
            for p in picks:
                peer = int(p) + (1 if p >= node else 0)
                if peer not in informed:
                    informed.add(peer)
                    newly.append(peer)
                    fruitful.add(node)
        for node in list(pushing):
            if node in fruitful:
                pushing[node] = 0
            else:
                pushing[node] += 1
                if pushing[node] >= patience:
                    del pushing[node]
        for peer in newly:
            pushing.setdefault(peer, 0)
        history.append(len(informed))
    return history


# --------------------------------------------------------------------------
# queues
# --------------------------------------------------------------------------

def mm1_sojourn(lam: float, mu: float) -> float:
    return 1.0 / (mu - lam)


def lindley_fifo(arrivals, services):
    """Service start and completion times of a single FIFO server."""
    starts, ends, free = [], [], 0.0
    for a, s in zip(arrivals, services):
        st = max(a, free)
        starts.append(st)
        free = st + s
        ends.append(free)
    return starts, ends


def seeded_normals(seed: int, n: int, sigma: float) -> list[float]:
    """Reference for reproducing a stream independently: reseed and redraw with numpy's algorithm."""
    import numpy as np

    return list(np.random.default_rng(seed).normal(0.0, sigma, size=n))


def shuffled(items, seed: int):
    out = list(items)
    random.Random(seed).shuffle(out)
    return out
