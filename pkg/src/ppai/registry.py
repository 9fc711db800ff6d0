"""Capability registry views and push gossip under churn.

Each node holds a :class:`RegistryView` of every agent's latest capability
vector. Changes travel as :class:`CapabilityRecord` messages carrying a
per-agent logical timestamp and a JOIN / UPDATE / DELETE flag. Views merge
records last-writer-wins, which makes :meth:`RegistryView.apply`
commutative and idempotent.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _jsonio
from .errors import FanoutTooLarge, ParseError


class Flag(str, enum.Enum):
    JOIN = "JOIN"
    UPDATE = "UPDATE"
    DELETE = "DELETE"


@dataclass(frozen=True)
class CapabilityRecord:
    agent: int
    ts: int
    flag: Flag
    cap: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "flag", Flag(self.flag))
        if self.flag is Flag.DELETE:
            if self.cap is not None:
                raise ValueError("DELETE records carry no capability vector")
        else:
            if self.cap is None:
                raise ValueError(f"{self.flag.value} record needs a capability vector")
            object.__setattr__(self, "cap", tuple(float(v) for v in self.cap))

    @property
    def key(self) -> tuple[int, int, str]:
        return (self.agent, self.ts, self.flag.value)

    def to_json(self) -> str:
        return _jsonio.dumps(
            {"agent": self.agent, "ts": self.ts, "flag": self.flag.value,
             "cap": None if self.cap is None else list(self.cap)}
        )

    @classmethod
    def from_json(cls, text: str | bytes) -> "CapabilityRecord":
        try:
            obj = json.loads(text)
            if set(obj) != {"agent", "ts", "flag", "cap"}:
                raise ValueError(f"unexpected fields {sorted(obj)}")
            return cls(int(obj["agent"]), int(obj["ts"]), Flag(obj["flag"]), obj["cap"])
        except (ValueError, TypeError, KeyError) as exc:
            raise ParseError(f"bad capability record: {exc}") from exc


class RegistryView:
    """One node's view: live agents with capabilities, plus tombstones."""

    def __init__(self) -> None:
        self.live: dict[int, tuple[np.ndarray, int]] = {}
        self.tombstones: dict[int, int] = {}
        self.version = 0

    def copy(self) -> "RegistryView":
        other = RegistryView()
        other.live = dict(self.live)
        other.tombstones = dict(self.tombstones)
        other.version = self.version
        return other

    def timestamp(self, agent: int) -> int | None:
        if agent in self.live:
            return self.live[agent][1]
        return self.tombstones.get(agent)

    def apply(self, rec: CapabilityRecord) -> bool:
        """Merge ``rec``; return True iff the view changed.

        Newer timestamps win. At equal timestamps a DELETE beats a live
        entry; any other tie keeps what is stored.
        """
        agent = rec.agent
        if agent in self.live:
            stored_ts, stored_live = self.live[agent][1], True
        elif agent in self.tombstones:
            stored_ts, stored_live = self.tombstones[agent], False
        else:
            stored_ts, stored_live = None, False

        if stored_ts is not None:
            if rec.ts < stored_ts:
                return False
            if rec.ts == stored_ts and not (rec.flag is Flag.DELETE and stored_live):
                return False

        if rec.flag is Flag.DELETE:
            self.live.pop(agent, None)
            self.tombstones[agent] = rec.ts
        else:
            self.tombstones.pop(agent, None)
            cap = np.array(rec.cap, dtype=float)
            cap.setflags(write=False)
            self.live[agent] = (cap, rec.ts)
        self.version += 1
        return True

    def live_ids(self) -> list[int]:
        return sorted(self.live)

    def capability_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """Sorted live agent ids and their stacked capability vectors."""
        ids = self.live_ids()
        if not ids:
            return np.empty(0, dtype=int), np.empty((0, 0))
        return np.array(ids), np.stack([self.live[a][0] for a in ids])

    def same_state(self, other: "RegistryView") -> bool:
        if self.tombstones != other.tombstones or self.live.keys() != other.live.keys():
            return False
        for agent, (cap, ts) in self.live.items():
            ocap, ots = other.live[agent]
            if ts != ots or not np.array_equal(cap, ocap):
                return False
        return True

    def __repr__(self) -> str:
        return f"RegistryView(live={len(self.live)}, tombstones={len(self.tombstones)})"


# An outbox maps record key -> [record, consecutive fruitless pushes].
Outbox = dict


def _sample_peers(node: int, n: int, fanout: int, rng: np.random.Generator) -> np.ndarray:
    peers = rng.choice(n - 1, size=fanout, replace=False)
    peers[peers >= node] += 1
    return peers


def gossip_round(
    views: Sequence[RegistryView],
    outboxes: list[Outbox],
    fanout: int,
    rng: np.random.Generator,
    patience: int = 4,
) -> int:
    """One synchronous push round; returns the number of state changes.

    Every node with pending records pushes them to ``fanout`` distinct
    random peers. A receiver whose view changes queues the record for its
    own next push. A sender drops a record after ``patience`` consecutive
    pushes in which it changed no receiver.
    """
    n = len(views)
    if fanout < 1:
        raise ValueError("fanout must be >= 1")
    if fanout > n - 1:
        raise FanoutTooLarge(f"fanout {fanout} exceeds {n - 1} available peers")

    senders = [i for i, box in enumerate(outboxes) if box]
    deliveries: list[tuple[int, CapabilityRecord]] = []
    fruitful_keys: set[tuple[int, tuple]] = set()
    changes = 0
    for node in senders:
        for peer in _sample_peers(node, n, fanout, rng):
            for key, (rec, _) in outboxes[node].items():
                if views[peer].apply(rec):
                    changes += 1
                    fruitful_keys.add((node, key))
                    deliveries.append((int(peer), rec))

    for node in senders:
        box = outboxes[node]
        for key in list(box):
            if (node, key) in fruitful_keys:
                box[key][1] = 0
            else:
                box[key][1] += 1
                if box[key][1] >= patience:
                    del box[key]
    for peer, rec in deliveries:
        outboxes[peer].setdefault(rec.key, [rec, 0])
    return changes


class GossipNetwork:
    """Views plus outboxes for ``n`` nodes, driven round by round."""

    def __init__(self, n: int, fanout: int = 3, patience: int = 4,
                 seed: int | np.random.Generator | None = 0,
                 base: RegistryView | None = None) -> None:
        if n < 1:
            raise ValueError("need at least one node")
        self.views = [base.copy() if base is not None else RegistryView() for _ in range(n)]
        self.outboxes: list[Outbox] = [{} for _ in range(n)]
        self.fanout = fanout
        self.patience = patience
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.rounds = 0

    def inject(self, node: int, rec: CapabilityRecord) -> bool:
        """Apply ``rec`` at ``node`` and queue it for dissemination if new."""
        changed = self.views[node].apply(rec)
        if changed:
            self.outboxes[node].setdefault(rec.key, [rec, 0])
        return changed

    def step(self) -> int:
        self.rounds += 1
        return gossip_round(self.views, self.outboxes, self.fanout, self.rng, self.patience)

    @property
    def quiescent(self) -> bool:
        return not any(self.outboxes)

    def consistent(self) -> bool:
        first = self.views[0]
        return all(first.same_state(v) for v in self.views[1:])

    def run_until_quiescent(self, max_rounds: int = 10_000) -> int:
        start = self.rounds
        while not self.quiescent and self.rounds - start < max_rounds:
            self.step()
        return self.rounds - start


def rounds_to_convergence(n: int, fanout: int = 3, trials: int = 100,
                          rng_seed: int = 0, patience: int = 4,
                          max_rounds: int = 1000) -> dict:
    """Rounds until a single injected record reaches every node, over ``trials`` runs.

    A trial where gossip dies out before full coverage counts as infinite.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(rng_seed)
    rounds = []
    for _ in range(trials):
        net = GossipNetwork(n, fanout, patience, seed=rng)
        net.inject(int(rng.integers(n)), CapabilityRecord(0, 1, Flag.JOIN, (1.0,)))
        r = 0
        while not net.consistent():
            if net.quiescent or r >= max_rounds:
                r = float("inf")
                break
            net.step()
            r += 1
        rounds.append(r)
    arr = np.array(rounds, dtype=float)
    return {
        "median": float(np.median(arr)),
        "p99": float(np.percentile(arr, 99, method="higher")),
        "failures": int(np.count_nonzero(~np.isfinite(arr))),
        "rounds": rounds,
    }
