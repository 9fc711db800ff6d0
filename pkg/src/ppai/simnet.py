"""Deterministic discrete-event simulation of peer-to-peer query routing.

Queries arrive as one Poisson stream and are issued by a uniformly chosen
active user. Each user scores the query against its registry view, asks
the candidates for state feedback, updates its beliefs and routes. Agents
are single-server FIFO queues with exponential service. Churn events
change the agent set and start gossip, which runs on a fixed tick while
any node has something to push.

Random draws come from independent per-purpose streams, and the service
and correctness draws of a query are taken at its arrival, so two runs
that differ only in routing see the same workload.
"""

from __future__ import annotations

import bisect
import enum
import functools
import heapq
import json
import math
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import _jsonio
from .errors import ConfigInvalid, EmptyQuery
from .qagate import FeatureHashEncoder, QAGate, evaluate_capability, load_gate, train_gate
from .registry import CapabilityRecord, Flag, GossipNetwork, RegistryView
from .scheduler import Observation, SchedulerParams, decide
from .workload import HETEROGENEOUS_PROFILES, cluster_query, synthetic_corpus

RECORD_SCHEMA = "ppai-query-record/1"
SUMMARY_SCHEMA = "ppai-summary/1"


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GateConfig:
    k: int = 8
    d: int = 64
    d_p: int = 16
    hidden: int = 32
    n_per_cluster: int = 60
    epochs: int = 60
    learning_rate: float = 0.5
    batch_size: int = 32
    seed: int = 0
    alpha: float = 2.0
    top_p: float = 0.25
    logit_scale: float = 10.0
    checkpoint: str | None = None


@dataclass(frozen=True)
class GossipConfig:
    fanout: int = 3
    interval: float = 0.1
    patience: int = 4


@dataclass(frozen=True)
class ChurnEvent:
    time: float
    agent: int
    flag: Flag
    truth: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "flag", Flag(self.flag))
        if self.truth is not None:
            object.__setattr__(self, "truth", tuple(float(v) for v in self.truth))


def _sim_scheduler_defaults() -> SchedulerParams:
    return SchedulerParams(belief_mixing=0.05)


@dataclass
class SimConfig:
    n_agents: int = 5
    # profiles are cycled when there are fewer than n_agents
    agent_truth_profiles: Sequence[Sequence[float]] = HETEROGENEOUS_PROFILES
    arrival_rate_lambda: float = 10.0
    service_rate_mu: float | Sequence[float] = 20.0
    inference_time_base: float = 0.0
    link_delay: float = 0.005
    link_bandwidth: float = 2e9
    query_size: float = 65536.0
    duration: float = 60.0
    seed: int = 0
    max_queries: int | None = None
    drain: bool = True
    churn_schedule: Sequence[ChurnEvent] = ()
    scheduler: SchedulerParams = field(default_factory=_sim_scheduler_defaults)
    gossip: GossipConfig = field(default_factory=GossipConfig)
    gate: GateConfig = field(default_factory=GateConfig)
    task_mix: Sequence[float] | None = None
    observation_window: float = 1.0
    validation_batch: int = 500
    query_bank: int = 32
    deterministic_service: bool = False
    forced_agent: int | None = None

    def __post_init__(self) -> None:
        self.agent_truth_profiles = tuple(tuple(float(v) for v in p) for p in self.agent_truth_profiles)
        self.churn_schedule = tuple(
            c if isinstance(c, ChurnEvent) else ChurnEvent(**c) for c in self.churn_schedule
        )
        if not isinstance(self.service_rate_mu, (int, float)):
            self.service_rate_mu = tuple(float(v) for v in self.service_rate_mu)
        if self.task_mix is not None:
            self.task_mix = tuple(float(v) for v in self.task_mix)
        self.validate()

    def validate(self) -> None:
        k = self.gate.k
        if self.n_agents < 1:
            raise ConfigInvalid("n_agents must be >= 1")
        if not self.agent_truth_profiles:
            raise ConfigInvalid("need at least one agent truth profile")
        for p in self.agent_truth_profiles:
            if len(p) != k or any(not 0.0 <= v <= 1.0 for v in p):
                raise ConfigInvalid(f"truth profiles need {k} accuracies in [0, 1]")
        mus = self.mu_per_agent()
        if np.any(mus <= 0):
            raise ConfigInvalid("service rates must be positive")
        for name in ("arrival_rate_lambda", "duration", "link_bandwidth", "observation_window"):
            if not getattr(self, name) > 0:
                raise ConfigInvalid(f"{name} must be positive")
        for name in ("inference_time_base", "link_delay", "query_size"):
            if getattr(self, name) < 0:
                raise ConfigInvalid(f"{name} must be non-negative")
        if self.max_queries is not None and self.max_queries < 1:
            raise ConfigInvalid("max_queries must be >= 1")
        if self.validation_batch < 1 or self.query_bank < 1:
            raise ConfigInvalid("validation_batch and query_bank must be >= 1")
        if self.forced_agent is not None and not 0 <= self.forced_agent < self.n_agents:
            raise ConfigInvalid("forced_agent out of range")
        if self.task_mix is not None:
            mix = np.asarray(self.task_mix)
            if mix.size != k or np.any(mix < 0) or mix.sum() <= 0:
                raise ConfigInvalid(f"task_mix needs {k} non-negative weights")
        for c in self.churn_schedule:
            if not 0 <= c.agent < self.n_agents or c.time < 0:
                raise ConfigInvalid(f"bad churn event {c}")
            if c.truth is not None and len(c.truth) != k:
                raise ConfigInvalid("churn truth profile has the wrong length")
        if self.gossip.fanout < 1 or self.gossip.interval <= 0 or self.gossip.patience < 1:
            raise ConfigInvalid("invalid gossip parameters")

    def mu_per_agent(self) -> np.ndarray:
        mu = np.atleast_1d(np.asarray(self.service_rate_mu, dtype=float))
        return np.resize(mu, self.n_agents)

    def truth_per_agent(self) -> np.ndarray:
        profiles = np.asarray(self.agent_truth_profiles, dtype=float)
        return profiles[np.arange(self.n_agents) % len(profiles)].copy()

    # ------------------------------------------------------------------
    @classmethod
    def from_dict(cls, raw: dict) -> "SimConfig":
        """Build from plain JSON data, rejecting unknown keys at every level."""
        if not isinstance(raw, dict):
            raise ConfigInvalid("config must be a JSON object")
        data = dict(raw)
        nested = {"scheduler": SchedulerParams, "gossip": GossipConfig, "gate": GateConfig}
        try:
            _reject_unknown(cls, data, "config")
            for key, typ in nested.items():
                if key in data:
                    _reject_unknown(typ, data[key], key)
                    data[key] = typ(**data[key])
            if "churn_schedule" in data:
                events = []
                for ev in data["churn_schedule"]:
                    _reject_unknown(ChurnEvent, ev, "churn event")
                    events.append(ChurnEvent(**ev))
                data["churn_schedule"] = events
            return cls(**data)
        except ConfigInvalid:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(str(exc)) from exc

    @classmethod
    def from_json(cls, path: str | Path) -> "SimConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"{path}: {exc}") from exc
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["churn_schedule"] = [
            {"time": c.time, "agent": c.agent, "flag": c.flag.value,
             **({"truth": list(c.truth)} if c.truth is not None else {})}
            for c in self.churn_schedule
        ]
        return json.loads(_jsonio.dumps(out))


def _reject_unknown(typ, data: Any, where: str) -> None:
    if not isinstance(data, dict):
        raise ConfigInvalid(f"{where} must be an object")
    allowed = {f.name for f in fields(typ)}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigInvalid(f"unknown {where} keys: {', '.join(unknown)}")


# --------------------------------------------------------------------------
# helpers exposed as operations
# --------------------------------------------------------------------------

def transfer_time(query_size: float, delay: float, bandwidth: float, local: bool = False) -> float:
    """Link delay plus serialization time; zero when served locally."""
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    if local:
        return 0.0
    return delay + query_size / bandwidth


def windowed_rate(arrival_times: Sequence[float], now: float, window: float) -> float:
    """Arrivals in ``(now - window, now]`` divided by ``window``; times must be sorted."""
    if not window > 0:
        raise ValueError("window must be positive")
    lo = bisect.bisect_right(arrival_times, now - window)
    hi = bisect.bisect_right(arrival_times, now)
    return (hi - lo) / window


def observe(arrival_times: Sequence[float], now: float, window: float, mu: float,
            rng: np.random.Generator, sigma: float, t_trans: float = 0.0,
            inference_time_base: float = 0.0) -> Observation:
    """State feedback an agent returns to a requesting user.

    The service rate is reported with Gaussian noise of std ``sigma``
    (one ``rng.normal`` draw); the inference-time estimate is
    ``inference_time_base + 1 / mu_obs``.
    """
    lam = windowed_rate(arrival_times, now, window)
    mu_obs = mu + rng.normal(0.0, sigma)
    return Observation(lam, mu_obs, inference_time_base + 1.0 / max(mu_obs, 1e-6), t_trans)


@functools.lru_cache(maxsize=16)
def build_gate(cfg: GateConfig) -> QAGate:
    """Load the configured checkpoint, or train a gate on a synthetic corpus."""
    if cfg.checkpoint:
        return load_gate(cfg.checkpoint)
    encoder = FeatureHashEncoder(cfg.d, cfg.seed)
    corpus = synthetic_corpus(cfg.k, cfg.n_per_cluster, cfg.seed, encoder)
    gate, _ = train_gate(
        corpus, cfg.k, cfg.d_p, encoder=encoder, learning_rate=cfg.learning_rate, epochs=cfg.epochs,
        batch_size=cfg.batch_size, seed=cfg.seed, d=cfg.d, hidden=cfg.hidden,
        logit_scale=cfg.logit_scale, alpha=cfg.alpha, top_p=cfg.top_p,
    )
    return gate


# --------------------------------------------------------------------------
# records and results
# --------------------------------------------------------------------------

@dataclass
class QueryRecord:
    id: int
    origin: int
    task: int
    true_label: list[float]
    issue_time: float
    route_target: int
    enqueue_time: float | None = None
    service_start: float | None = None
    completion_time: float | None = None
    correct: bool | None = None

    @property
    def process_time(self) -> float | None:
        if self.completion_time is None:
            return None
        return self.completion_time - self.issue_time

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MetricsSummary:
    avg_accuracy: float
    avg_process_time: float
    per_agent_counts: list[int]
    assignment_entropy: float
    issued: int
    completed: int
    in_flight: int

    def to_dict(self) -> dict:
        return {"schema": SUMMARY_SCHEMA, **asdict(self)}


def entropy_bits(counts: Sequence[int]) -> float:
    c = np.asarray(counts, dtype=float)
    total = c.sum()
    if total == 0:
        return 0.0
    p = c[c > 0] / total
    return float(-(p * np.log2(p)).sum() + 0.0)


def summarize(records: Sequence[QueryRecord], n_agents: int) -> MetricsSummary:
    done = [r for r in records if r.completion_time is not None]
    counts = np.bincount([r.route_target for r in done], minlength=n_agents).astype(int)
    return MetricsSummary(
        avg_accuracy=float(np.mean([r.correct for r in done])) if done else float("nan"),
        avg_process_time=float(np.mean([r.process_time for r in done])) if done else float("nan"),
        per_agent_counts=counts.tolist(),
        assignment_entropy=entropy_bits(counts),
        issued=len(records),
        completed=len(done),
        in_flight=len(records) - len(done),
    )


@dataclass
class SimResult:
    summary: MetricsSummary
    records: list[QueryRecord]
    events_processed: int = 0

    def write(self, out_dir: str | Path, tag: str = "run") -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        log = out / f"{tag}.records.ndjson"
        summary = out / f"{tag}.summary.json"
        _jsonio.write_ndjson(log, (r.to_dict() for r in self.records))
        _jsonio.write_json(summary, self.summary.to_dict())
        return log, summary


# --------------------------------------------------------------------------
# the event loop
# --------------------------------------------------------------------------

class Kind(enum.IntEnum):
    CHURN = 0
    GOSSIP_TICK = 1
    TRANSFER_DONE = 2
    SERVICE_DONE = 3
    ARRIVAL = 4


class _BeliefStore:
    """One user's beliefs: a row of cell masses per agent it has observed."""

    __slots__ = ("rows", "masses", "n")

    def __init__(self, cells: int) -> None:
        self.rows: dict[int, int] = {}
        self.masses = np.empty((4, cells))
        self.n = 0

    def get(self, agents: np.ndarray) -> np.ndarray:
        idx = np.empty(agents.size, dtype=int)
        for pos, a in enumerate(agents.tolist()):
            row = self.rows.get(a)
            if row is None:
                if self.n == self.masses.shape[0]:
                    self.masses = np.concatenate([self.masses, np.empty_like(self.masses)])
                row = self.rows[a] = self.n
                self.masses[row] = 1.0 / self.masses.shape[1]
                self.n += 1
            idx[pos] = row
        return idx


class Simulation:
    def __init__(self, config: SimConfig) -> None:
        self.cfg = cfg = config
        self.n = cfg.n_agents
        self.k = cfg.gate.k
        self.gate = build_gate(cfg.gate)
        if self.gate.k != self.k:
            raise ConfigInvalid("gate prototype count does not match gate.k")
        self.mu = cfg.mu_per_agent()
        self.truth = cfg.truth_per_agent()
        self.params = cfg.scheduler
        self.grid = self.params.grid()
        self.t_remote = transfer_time(cfg.query_size, cfg.link_delay, cfg.link_bandwidth)

        streams = np.random.SeedSequence(cfg.seed).spawn(7)
        (self.rng_arrival, self.rng_task, self.rng_service, self.rng_correct,
         self.rng_obs, rng_gossip, rng_bank) = (np.random.default_rng(s) for s in streams)

        mix = np.ones(self.k) if cfg.task_mix is None else np.asarray(cfg.task_mix)
        self.task_cdf = np.cumsum(mix / mix.sum())
        self.bank = [
            [self._bank_query(c, rng_bank) for _ in range(cfg.query_bank)] for c in range(self.k)
        ]

        # agents whose first churn event is a JOIN start outside the network
        first_flag: dict[int, Flag] = {}
        for ev in sorted(cfg.churn_schedule, key=lambda e: e.time):
            first_flag.setdefault(ev.agent, ev.flag)
        self.active = np.array([first_flag.get(j) is not Flag.JOIN for j in range(self.n)])
        self.clock = np.zeros(self.n, dtype=int)
        self._cap_cache: dict[bytes, np.ndarray] = {}

        base = RegistryView()
        for j in np.flatnonzero(self.active):
            self.clock[j] = 1
            base.apply(CapabilityRecord(int(j), 1, Flag.JOIN, self.measure(self.truth[j])))
        fanout = min(cfg.gossip.fanout, max(self.n - 1, 1))
        self.net = GossipNetwork(self.n, fanout, cfg.gossip.patience, seed=rng_gossip, base=base)
        self.base_version = base.version
        self.base_snapshot = self._snapshot(base)
        self.snapshots: dict[int, tuple] = {}
        self.belief_cells = self.grid.size
        self.beliefs: dict[int, _BeliefStore] = {}

        self.arrivals: list[list[float]] = [[] for _ in range(self.n)]
        self.queues: list[list[int]] = [[] for _ in range(self.n)]
        self.queue_head = [0] * self.n
        self.busy = [False] * self.n
        self.records: list[QueryRecord] = []
        self._draws: list[tuple[float, float]] = []
        self.heap: list = []
        self.seq = 0
        self.now = 0.0
        self.tick_pending = False
        self.events = 0

    # ------------------------------------------------------------------
    def _bank_query(self, cluster: int, rng: np.random.Generator) -> np.ndarray:
        while True:
            try:
                return self.gate.relevance(cluster_query(cluster, rng))
            except EmptyQuery:
                continue  # signed hash features cancelled; draw another query

    def measure(self, truth: np.ndarray) -> np.ndarray:
        """Measured capability; identical truth profiles share one measurement."""
        key = truth.tobytes()
        cap = self._cap_cache.get(key)
        if cap is None:
            seed = np.random.SeedSequence([self.cfg.seed, zlib.crc32(key)])
            batches = [range(self.cfg.validation_batch)] * self.k
            cap = evaluate_capability(truth, batches, seed)
            if not cap.any():
                cap = np.full(self.k, 1e-9)
            self._cap_cache[key] = cap
        return cap

    @staticmethod
    def _snapshot(view: RegistryView) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        ids, caps = view.capability_matrix()
        norms = np.linalg.norm(caps, axis=1) if ids.size else np.empty(0)
        return ids, caps, norms

    def snapshot(self, node: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        view = self.net.views[node]
        if view.version == self.base_version:
            return self.base_snapshot
        cached = self.snapshots.get(node)
        if cached is None or cached[0] != view.version:
            cached = (view.version, self._snapshot(view))
            self.snapshots[node] = cached
        return cached[1]

    def push(self, time: float, kind: Kind, payload: Any = None) -> None:
        heapq.heappush(self.heap, (time, self.seq, kind, payload))
        self.seq += 1

    def schedule_tick(self) -> None:
        if self.tick_pending or self.n < 2:
            return
        step = self.cfg.gossip.interval
        self.push((math.floor(self.now / step) + 1) * step, Kind.GOSSIP_TICK)
        self.tick_pending = True

    # ------------------------------------------------------------------
    def run(self) -> SimResult:
        cfg = self.cfg
        for ev in sorted(cfg.churn_schedule, key=lambda e: e.time):
            self.push(ev.time, Kind.CHURN, ev)
        self.push(self.rng_arrival.exponential(1.0 / cfg.arrival_rate_lambda), Kind.ARRIVAL)

        handlers = {
            Kind.ARRIVAL: self._on_arrival,
            Kind.TRANSFER_DONE: self._on_transfer,
            Kind.SERVICE_DONE: self._on_service_done,
            Kind.GOSSIP_TICK: self._on_tick,
            Kind.CHURN: self._on_churn,
        }
        while self.heap:
            time, _, kind, payload = heapq.heappop(self.heap)
            if not cfg.drain and time > cfg.duration:
                break
            self.now = time
            self.events += 1
            handlers[kind](payload)
        return SimResult(summarize(self.records, self.n), self.records, self.events)

    def _on_arrival(self, _payload) -> None:
        cfg = self.cfg
        t = self.now
        if t > cfg.duration:
            return
        users = np.flatnonzero(self.active)
        if users.size:
            user = int(users[self.rng_task.integers(users.size)])
            task = int(np.searchsorted(self.task_cdf, self.rng_task.random(), side="right"))
            task = min(task, self.k - 1)
            rel = self.bank[task][int(self.rng_task.integers(cfg.query_bank))]
            self._issue(user, task, rel)
        if cfg.max_queries is None or len(self.records) < cfg.max_queries:
            self.push(t + self.rng_arrival.exponential(1.0 / cfg.arrival_rate_lambda), Kind.ARRIVAL)

    def _issue(self, user: int, task: int, rel: np.ndarray) -> None:
        cfg = self.cfg
        target = cfg.forced_agent if cfg.forced_agent is not None else self._route(user, rel)
        label = [0.0] * self.k
        label[task] = 1.0
        qid = len(self.records)
        self.records.append(QueryRecord(qid, user, task, label, self.now, target))
        self._draws.append((self.rng_service.standard_exponential(), self.rng_correct.random()))
        if target == user:
            self._enqueue(qid)
        else:
            self.push(self.now + self.t_remote, Kind.TRANSFER_DONE, qid)

    def _route(self, user: int, rel: np.ndarray) -> int:
        ids, caps, norms = self.snapshot(user)
        if ids.size == 0:
            return user
        scores = np.clip(caps @ rel / (norms * np.linalg.norm(rel)), -1.0, 1.0)
        keep = (scores >= self.params.theta_s) | (ids == user)
        cand = ids[keep]
        if cand.size == 0:
            return user
        window = self.cfg.observation_window
        lam_obs = np.array([windowed_rate(self.arrivals[j], self.now, window) for j in cand.tolist()])
        mu_obs = self.mu[cand] + self.rng_obs.normal(0.0, self.params.sigma, size=cand.size)
        t_infer = self.cfg.inference_time_base + 1.0 / np.maximum(mu_obs, 1e-6)
        t_trans = np.where(cand == user, 0.0, self.t_remote)
        store = self.beliefs.get(user)
        if store is None:
            store = self.beliefs[user] = _BeliefStore(self.belief_cells)
        rows = store.get(cand)
        pos, _, post = decide(cand, scores[keep], store.masses[rows], self.grid,
                              lam_obs, mu_obs, t_infer, t_trans, self.params)
        store.masses[rows] = post
        return int(cand[pos])

    def _on_transfer(self, qid: int) -> None:
        self._enqueue(qid)

    def _enqueue(self, qid: int) -> None:
        rec = self.records[qid]
        j = rec.route_target
        rec.enqueue_time = self.now
        self.arrivals[j].append(self.now)
        if self.busy[j]:
            self.queues[j].append(qid)
        else:
            self._start(j, qid)

    def _start(self, j: int, qid: int) -> None:
        rec = self.records[qid]
        rec.service_start = self.now
        self.busy[j] = True
        if self.cfg.deterministic_service:
            service = 1.0 / self.mu[j]
        else:
            service = self._draws[qid][0] / self.mu[j]
        self.push(self.now + self.cfg.inference_time_base + service, Kind.SERVICE_DONE, qid)

    def _on_service_done(self, qid: int) -> None:
        rec = self.records[qid]
        j = rec.route_target
        rec.completion_time = self.now
        rec.correct = bool(self._draws[qid][1] < self.truth[j][rec.task])
        head = self.queue_head[j]
        if head < len(self.queues[j]):
            self.queue_head[j] = head + 1
            self._start(j, self.queues[j][head])
        else:
            self.busy[j] = False
            self.queues[j].clear()
            self.queue_head[j] = 0

    def _on_tick(self, _payload) -> None:
        self.tick_pending = False
        self.net.step()
        if not self.net.quiescent:
            self.schedule_tick()

    def _on_churn(self, ev: ChurnEvent) -> None:
        j = ev.agent
        if ev.truth is not None:
            self.truth[j] = np.asarray(ev.truth)
        if ev.flag is Flag.DELETE:
            if not self.active[j]:
                return
            self.active[j] = False
            cap = None
        else:
            self.active[j] = True
            cap = self.measure(self.truth[j])
        self.clock[j] += 1
        self.net.inject(j, CapabilityRecord(j, int(self.clock[j]), ev.flag, cap))
        self.schedule_tick()


def run(config: SimConfig) -> SimResult:
    """Run one simulation; identical configs give identical results."""
    return Simulation(config).run()


def random_churn_schedule(rate: float, duration: float, n_agents: int, seed: int) -> list[ChurnEvent]:
    """Poisson churn: each event toggles a random agent out of or back into the network."""
    if rate < 0:
        raise ValueError("churn rate must be non-negative")
    events: list[ChurnEvent] = []
    if rate == 0 or n_agents < 2:
        return events
    rng = np.random.default_rng(seed)
    present = np.ones(n_agents, dtype=bool)
    t = rng.exponential(1.0 / rate)
    while t < duration:
        j = int(rng.integers(n_agents))
        if present[j] and present.sum() == 1:
            flag = Flag.UPDATE
        else:
            flag = Flag.DELETE if present[j] else Flag.JOIN
        if flag is not Flag.UPDATE:
            present[j] = not present[j]
        events.append(ChurnEvent(float(t), j, flag))
        t += rng.exponential(1.0 / rate)
    return events
