"""Prototype-anchored query/agent scoring.

Queries are embedded by a seeded feature-hash encoder, mapped through a
two-layer ReLU projector and compared against K learned prototypes by
cosine similarity. The resulting relevance vector is sharpened with a
power ``alpha``, restricted to the top ``p`` fraction of prototypes and
compared against agent capability vectors.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import _jsonio
from .errors import (
    DegenerateProjection,
    DimensionMismatch,
    EmptyBatch,
    EmptyQuery,
    EmptyTrainingSet,
    LabelDimensionMismatch,
    NonPositiveTopScores,
    ParseError,
    ZeroVector,
)

NORM_EPS = 1e-12
CHECKPOINT_FORMAT = "ppai-gate"
CHECKPOINT_VERSION = 1

_TOKEN_RE = re.compile(rb"[0-9A-Za-z]+")


# --------------------------------------------------------------------------
# encoder
# --------------------------------------------------------------------------

def tokenize(text: bytes | str) -> list[bytes]:
    if isinstance(text, str):
        text = text.encode("utf-8")
    return [tok.lower() for tok in _TOKEN_RE.findall(text)]


def _hash64(token: bytes, seed: int, person: bytes) -> int:
    digest = hashlib.blake2b(
        token, digest_size=8, key=seed.to_bytes(8, "little"), person=person
    ).digest()
    return int.from_bytes(digest, "little")


def encode(query_text: bytes | str, d: int, seed: int = 0) -> np.ndarray:
    """Signed feature-hash bag of words, l2-normalized.

    Tokens are maximal ASCII alphanumeric runs, lowercased. Each token
    lands in bucket ``blake2b(token, key=seed, person="ppai.bucket") % d``
    with sign taken from the low bit of a second keyed hash.
    """
    if d < 8:
        raise ValueError(f"embedding dimension must be >= 8, got {d}")
    tokens = tokenize(query_text)
    if not tokens:
        raise EmptyQuery("no tokens survive tokenization")
    vec = np.zeros(d)
    for tok in tokens:
        bucket = _hash64(tok, seed, b"ppai.bucket") % d
        sign = 1.0 if _hash64(tok, seed, b"ppai.sign") & 1 else -1.0
        vec[bucket] += sign
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        raise EmptyQuery("hashed token features cancel to zero")
    return vec / norm


@dataclass(frozen=True)
class FeatureHashEncoder:
    """Swappable encoder; anything mapping text to a length-``d`` vector works."""

    d: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        if self.d < 8:
            raise ValueError(f"embedding dimension must be >= 8, got {self.d}")
        if self.seed < 0:
            raise ValueError("encoder seed must be non-negative")

    def __call__(self, text: bytes | str) -> np.ndarray:
        return encode(text, self.d, self.seed)


# --------------------------------------------------------------------------
# projector and prototype scores
# --------------------------------------------------------------------------

@dataclass
class Projector:
    w1: np.ndarray  # (hidden, d)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (d_p, hidden)
    b2: np.ndarray  # (d_p,)

    def __post_init__(self) -> None:
        self.w1 = np.asarray(self.w1, dtype=float)
        self.b1 = np.asarray(self.b1, dtype=float)
        self.w2 = np.asarray(self.w2, dtype=float)
        self.b2 = np.asarray(self.b2, dtype=float)
        hidden, _ = self.w1.shape
        d_p, hidden2 = self.w2.shape
        if self.b1.shape != (hidden,) or hidden2 != hidden or self.b2.shape != (d_p,):
            raise DimensionMismatch("inconsistent projector parameter shapes")
        for arr in (self.w1, self.b1, self.w2, self.b2):
            if not np.all(np.isfinite(arr)):
                raise ValueError("projector parameters must be finite")

    @property
    def d_in(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def d_out(self) -> int:
        return self.w2.shape[0]

    @classmethod
    def initialize(cls, d: int, hidden: int, d_p: int, rng: np.random.Generator) -> "Projector":
        w1 = rng.normal(0.0, math.sqrt(2.0 / d), size=(hidden, d))
        w2 = rng.normal(0.0, math.sqrt(2.0 / hidden), size=(d_p, hidden))
        return cls(w1, np.zeros(hidden), w2, np.zeros(d_p))

    def __call__(self, q: np.ndarray) -> np.ndarray:
        return project(self, q)


def project(proj: Projector, q: np.ndarray) -> np.ndarray:
    """``w2 @ relu(w1 @ q + b1) + b2``; accepts a single vector or a batch of rows."""
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != proj.d_in:
        raise DimensionMismatch(f"query has dimension {q.shape[-1]}, projector expects {proj.d_in}")
    hidden = np.maximum(0.0, q @ proj.w1.T + proj.b1)
    return hidden @ proj.w2.T + proj.b2


def check_prototypes(protos: np.ndarray) -> np.ndarray:
    protos = np.asarray(protos, dtype=float)
    if protos.ndim != 2 or protos.shape[0] < 2:
        raise ValueError("need a (K, d_p) prototype matrix with K >= 2")
    if np.any(np.linalg.norm(protos, axis=1) <= NORM_EPS):
        raise ValueError("prototype with zero norm")
    return protos


def cosine_to_prototypes(h: np.ndarray, protos: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    if h.shape[-1] != protos.shape[1]:
        raise DimensionMismatch("projection and prototype dimensions differ")
    h_norm = np.linalg.norm(h, axis=-1, keepdims=True)
    if np.any(h_norm <= NORM_EPS):
        raise DegenerateProjection("projected query has (near) zero norm")
    p_norm = np.linalg.norm(protos, axis=1)
    return np.clip((h @ protos.T) / (h_norm * p_norm), -1.0, 1.0)


def relevance(proj: Projector, protos: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Raw cosine relevance of query embedding(s) ``q`` to each prototype."""
    protos = check_prototypes(protos)
    return cosine_to_prototypes(project(proj, q), protos)


def retained_count(p: float, k: int) -> int:
    if not 0.0 < p <= 1.0:
        raise ValueError(f"top-p fraction must lie in (0, 1], got {p}")
    # round first so 0.35 * 20 == 7.000000000000001 still keeps 7
    return max(1, math.ceil(round(p * k, 9)))


def mask(raw: np.ndarray, alpha: float, p: float, clamp: bool = True) -> np.ndarray:
    """Sharpen and sparsify a raw relevance vector.

    Keeps the ``ceil(p*K)`` largest scores (lower index wins ties), raises
    them to ``alpha`` and renormalizes over the kept set. With ``clamp``
    negative scores are first set to zero, and an all-zero kept set falls
    back to a uniform distribution over it. Without ``clamp`` a kept score
    <= 0 raises :class:`NonPositiveTopScores`.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 1:
        raise ValueError("mask expects a single relevance vector")
    n_keep = retained_count(p, raw.size)
    if clamp:
        raw = np.maximum(raw, 0.0)
    keep = np.argsort(-raw, kind="stable")[:n_keep]
    top = raw[keep]
    out = np.zeros_like(raw)
    if not clamp and np.any(top <= 0.0):
        raise NonPositiveTopScores("retained relevance scores must be positive")
    powered = top**alpha
    total = powered.sum()
    if total > 0.0:
        out[keep] = powered / total
    else:
        out[keep] = 1.0 / n_keep
    return out


def score(rel: np.ndarray, cap: np.ndarray) -> float:
    """Cosine similarity between a masked relevance vector and a capability vector."""
    rel = np.asarray(rel, dtype=float)
    cap = np.asarray(cap, dtype=float)
    if rel.shape != cap.shape:
        raise DimensionMismatch("relevance and capability lengths differ")
    nr, nc = np.linalg.norm(rel), np.linalg.norm(cap)
    if nr == 0.0 or nc == 0.0:
        raise ZeroVector("score needs two nonzero vectors")
    return float(np.clip(rel @ cap / (nr * nc), -1.0, 1.0))


def score_many(rel: np.ndarray, caps: np.ndarray) -> np.ndarray:
    """Row-wise :func:`score` against a (n_agents, K) capability matrix."""
    rel = np.asarray(rel, dtype=float)
    caps = np.asarray(caps, dtype=float)
    nr = np.linalg.norm(rel)
    nc = np.linalg.norm(caps, axis=1)
    if nr == 0.0 or np.any(nc == 0.0):
        raise ZeroVector("score needs two nonzero vectors")
    return np.clip(caps @ rel / (nc * nr), -1.0, 1.0)


# --------------------------------------------------------------------------
# the gate
# --------------------------------------------------------------------------

@dataclass
class QAGate:
    encoder: FeatureHashEncoder
    projector: Projector
    prototypes: np.ndarray
    alpha: float = 2.0
    top_p: float = 0.25
    logit_scale: float = 10.0

    def __post_init__(self) -> None:
        self.prototypes = check_prototypes(self.prototypes)
        if self.projector.d_in != self.encoder.d:
            raise DimensionMismatch("projector input does not match encoder dimension")
        if self.projector.d_out != self.prototypes.shape[1]:
            raise DimensionMismatch("projector output does not match prototype dimension")

    @property
    def k(self) -> int:
        return self.prototypes.shape[0]

    def raw_relevance(self, text: bytes | str) -> np.ndarray:
        return relevance(self.projector, self.prototypes, self.encoder(text))

    def relevance(self, text: bytes | str) -> np.ndarray:
        """Masked relevance vector for ``text``."""
        return mask(self.raw_relevance(text), self.alpha, self.top_p)

    def predict_proba(self, texts: Sequence[bytes | str]) -> np.ndarray:
        q = np.stack([self.encoder(t) for t in texts])
        z = self.logit_scale * relevance(self.projector, self.prototypes, q)
        return _softmax(z)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


PARAM_NAMES = ("w1", "b1", "w2", "b2", "prototypes")


def kl_loss_and_grad(
    params: dict[str, np.ndarray],
    queries: np.ndarray,
    labels: np.ndarray,
    logit_scale: float = 1.0,
    with_grad: bool = True,
) -> tuple[float, dict[str, np.ndarray] | None]:
    """Mean KL(label || softmax(logit_scale * cosine scores)) and its gradient.

    ``params`` holds ``w1, b1, w2, b2, prototypes``. Gradients are exact
    (hand-derived backprop through the cosine and the MLP).
    """
    w1, b1, w2, b2, protos = (params[name] for name in PARAM_NAMES)
    pre = queries @ w1.T + b1
    act = np.maximum(pre, 0.0)
    h = act @ w2.T + b2
    h_norm = np.linalg.norm(h, axis=1)
    if np.any(h_norm <= NORM_EPS):
        raise DegenerateProjection("projected query has (near) zero norm")
    c_norm = np.linalg.norm(protos, axis=1)
    h_unit = h / h_norm[:, None]
    c_unit = protos / c_norm[:, None]
    cos = h_unit @ c_unit.T
    log_p = _log_softmax(logit_scale * cos)
    safe = np.where(labels > 0, labels, 1.0)
    kl = (labels * (np.log(safe) - log_p)).sum(axis=1)
    loss = float(kl.mean())
    if not with_grad:
        return loss, None

    n = queries.shape[0]
    # d loss / d cos
    g = logit_scale * (np.exp(log_p) * labels.sum(axis=1, keepdims=True) - labels) / n
    gc = g * cos
    d_h = (g @ c_unit - gc.sum(axis=1)[:, None] * h_unit) / h_norm[:, None]
    d_protos = (g.T @ h_unit - gc.sum(axis=0)[:, None] * c_unit) / c_norm[:, None]
    d_w2 = d_h.T @ act
    d_b2 = d_h.sum(axis=0)
    d_pre = (d_h @ w2) * (pre > 0.0)
    d_w1 = d_pre.T @ queries
    d_b1 = d_pre.sum(axis=0)
    return loss, {"w1": d_w1, "b1": d_b1, "w2": d_w2, "b2": d_b2, "prototypes": d_protos}


def _check_labels(labels: np.ndarray, k: int) -> None:
    if k < 2:
        raise LabelDimensionMismatch(f"need K >= 2 prototypes, got {k}")
    if labels.ndim != 2 or labels.shape[1] != k:
        raise LabelDimensionMismatch(f"every label must have length K={k}")
    if np.any(labels < 0) or not np.all(np.isfinite(labels)):
        raise ValueError("labels must be finite and non-negative")
    if np.any(np.abs(labels.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("labels must sum to one")


def train_gate(
    examples: Sequence[tuple[bytes | str, Sequence[float]]],
    k: int,
    d_p: int = 16,
    *,
    learning_rate: float = 0.5,
    epochs: int = 100,
    batch_size: int = 32,
    seed: int = 0,
    d: int = 64,
    hidden: int = 32,
    encoder_seed: int = 0,
    logit_scale: float = 10.0,
    alpha: float = 2.0,
    top_p: float = 0.25,
    encoder: FeatureHashEncoder | None = None,
) -> tuple[QAGate, list[float]]:
    """Jointly fit projector and prototypes by mini-batch gradient descent.

    Returns the gate and the full-set loss measured after every epoch.
    """
    if not examples:
        raise EmptyTrainingSet("no training examples")
    labels = np.array([np.asarray(y, dtype=float) for _, y in examples])
    if labels.ndim != 2:
        raise LabelDimensionMismatch("labels have inconsistent lengths")
    _check_labels(labels, k)
    encoder = encoder or FeatureHashEncoder(d, encoder_seed)
    queries = np.stack([encoder(text) for text, _ in examples])

    rng = np.random.default_rng(seed)
    proj = Projector.initialize(encoder.d, hidden, d_p, rng)
    protos = rng.standard_normal((k, d_p))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    params = {"w1": proj.w1, "b1": proj.b1, "w2": proj.w2, "b2": proj.b2, "prototypes": protos}

    n = len(queries)
    losses = []
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            _, grads = kl_loss_and_grad(params, queries[idx], labels[idx], logit_scale)
            for name in PARAM_NAMES:
                params[name] = params[name] - learning_rate * grads[name]
        losses.append(kl_loss_and_grad(params, queries, labels, logit_scale, with_grad=False)[0])

    gate = QAGate(
        encoder=encoder,
        projector=Projector(params["w1"], params["b1"], params["w2"], params["b2"]),
        prototypes=params["prototypes"],
        alpha=alpha,
        top_p=top_p,
        logit_scale=logit_scale,
    )
    return gate, losses


def argmax_accuracy(gate: QAGate, examples: Sequence[tuple[bytes | str, Sequence[float]]]) -> float:
    """Fraction of examples whose top raw-relevance prototype matches the label's argmax."""
    if not examples:
        raise EmptyBatch("no examples to evaluate")
    q = np.stack([gate.encoder(t) for t, _ in examples])
    pred = relevance(gate.projector, gate.prototypes, q).argmax(axis=1)
    truth = np.array([int(np.argmax(y)) for _, y in examples])
    return float(np.mean(pred == truth))


def one_hot(cluster_ids: Iterable[int], k: int) -> np.ndarray:
    ids = np.asarray(list(cluster_ids), dtype=int)
    if np.any(ids < 0) or np.any(ids >= k):
        raise LabelDimensionMismatch("cluster id out of range")
    out = np.zeros((ids.size, k))
    out[np.arange(ids.size), ids] = 1.0
    return out


# --------------------------------------------------------------------------
# capability profiles
# --------------------------------------------------------------------------

def evaluate_capability(
    agent_truth: Sequence[float],
    validation_sets: Sequence[Sequence],
    rng_seed: int | np.random.SeedSequence | None,
) -> np.ndarray:
    """Measured per-prototype accuracy of a synthetic agent.

    Every query in ``validation_sets[k]`` is answered correctly with
    probability ``agent_truth[k]``.
    """
    truth = np.asarray(agent_truth, dtype=float)
    if truth.ndim != 1 or truth.size != len(validation_sets):
        raise DimensionMismatch("one validation batch per prototype is required")
    if np.any(truth < 0) or np.any(truth > 1):
        raise ValueError("agent accuracies must lie in [0, 1]")
    rng = np.random.default_rng(rng_seed)
    values = np.empty(truth.size)
    for k, batch in enumerate(validation_sets):
        n = len(batch)
        if n == 0:
            raise EmptyBatch(f"validation batch {k} is empty")
        values[k] = np.count_nonzero(rng.random(n) < truth[k]) / n
    return values


# --------------------------------------------------------------------------
# files
# --------------------------------------------------------------------------

def gate_to_dict(gate: QAGate) -> dict:
    proj = gate.projector
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "d": gate.encoder.d,
        "encoder_seed": gate.encoder.seed,
        "hidden": proj.hidden,
        "d_p": proj.d_out,
        "K": gate.k,
        "alpha": float(gate.alpha),
        "top_p": float(gate.top_p),
        "logit_scale": float(gate.logit_scale),
        "w1": proj.w1.ravel().tolist(),
        "b1": proj.b1.tolist(),
        "w2": proj.w2.ravel().tolist(),
        "b2": proj.b2.tolist(),
        "prototypes": gate.prototypes.ravel().tolist(),
    }


def gate_from_dict(rec: dict) -> QAGate:
    if rec.get("format") != CHECKPOINT_FORMAT or rec.get("version") != CHECKPOINT_VERSION:
        raise ParseError("not a version-1 gate checkpoint")
    try:
        d, hidden, d_p, k = rec["d"], rec["hidden"], rec["d_p"], rec["K"]
        proj = Projector(
            np.array(rec["w1"], dtype=float).reshape(hidden, d),
            np.array(rec["b1"], dtype=float),
            np.array(rec["w2"], dtype=float).reshape(d_p, hidden),
            np.array(rec["b2"], dtype=float),
        )
        protos = np.array(rec["prototypes"], dtype=float).reshape(k, d_p)
        return QAGate(
            encoder=FeatureHashEncoder(d, rec["encoder_seed"]),
            projector=proj,
            prototypes=protos,
            alpha=rec["alpha"],
            top_p=rec["top_p"],
            logit_scale=rec["logit_scale"],
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ParseError(f"malformed gate checkpoint: {exc}") from exc


def save_gate(gate: QAGate, path: str | Path) -> None:
    _jsonio.write_json(path, gate_to_dict(gate))


def load_gate(path: str | Path) -> QAGate:
    try:
        rec = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return gate_from_dict(rec)


def read_training_file(path: str | Path) -> list[tuple[str, np.ndarray]]:
    """Parse newline-delimited ``{"text": ..., "label": [...]}`` records."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                text, label = rec["text"], rec["label"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            if not isinstance(text, str) or not isinstance(label, list):
                raise ParseError(f"{path}:{lineno}: text must be a string and label a list")
            rows.append((text, np.asarray(label, dtype=float)))
    return rows


def write_training_file(path: str | Path, examples: Iterable[tuple[str, Sequence[float]]]) -> None:
    _jsonio.write_ndjson(
        path, ({"text": text, "label": [float(v) for v in label]} for text, label in examples)
    )
