"""Belief-based, congestion-aware routing decisions for one user.

A user keeps a discrete belief over each agent's private type
``(mu, lambda)`` (service rate, arrival rate), updates it by Bayes' rule
from state feedback, and routes each query to the candidate maximizing
``relevance - beta * cost_of_delegation``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, MutableMapping, Sequence

import numpy as np

from .errors import DegenerateLikelihood, NoLiveAgents
from .qagate import score_many
from .registry import RegistryView


@dataclass(frozen=True)
class AgentType:
    mu: float
    lam: float

    def __post_init__(self) -> None:
        if not self.mu > 0:
            raise ValueError("service rate must be positive")
        if not self.lam >= 0:
            raise ValueError("arrival rate must be non-negative")


class TypeGrid:
    """Cartesian grid of candidate ``(mu, lambda)`` types.

    Cells are ordered mu-major: cell ``i * len(lambda_values) + j`` is
    ``(mu_values[i], lambda_values[j])``.
    """

    def __init__(self, mu_values: Sequence[float], lambda_values: Sequence[float]) -> None:
        mu = np.sort(np.asarray(mu_values, dtype=float))
        lam = np.sort(np.asarray(lambda_values, dtype=float))
        if mu.size == 0 or lam.size == 0:
            raise ValueError("type grid must be nonempty")
        if np.any(mu <= 0):
            raise ValueError("grid service rates must be positive")
        if np.any(lam < 0):
            raise ValueError("grid arrival rates must be non-negative")
        self.mu_values = mu
        self.lambda_values = lam
        mm, ll = np.meshgrid(mu, lam, indexing="ij")
        self.mu = mm.ravel()
        self.lam = ll.ravel()

    @classmethod
    def linspace(cls, mu_range: tuple[float, float], lambda_range: tuple[float, float],
                 resolution: tuple[int, int] = (8, 8)) -> "TypeGrid":
        return cls(np.linspace(*mu_range, resolution[0]), np.linspace(*lambda_range, resolution[1]))

    @classmethod
    def from_cells(cls, cells: Sequence[tuple[float, float]]) -> "TypeGrid":
        """Grid holding exactly the given ``(mu, lambda)`` cells, possibly repeated."""
        grid = cls.__new__(cls)
        arr = np.asarray(cells, dtype=float).reshape(-1, 2)
        if arr.size == 0 or np.any(arr[:, 0] <= 0) or np.any(arr[:, 1] < 0):
            raise ValueError("invalid grid cells")
        grid.mu, grid.lam = arr[:, 0].copy(), arr[:, 1].copy()
        grid.mu_values, grid.lambda_values = np.unique(grid.mu), np.unique(grid.lam)
        return grid

    @property
    def size(self) -> int:
        return self.mu.size

    def cell_of(self, t: AgentType) -> int:
        hits = np.flatnonzero((self.mu == t.mu) & (self.lam == t.lam))
        if hits.size == 0:
            raise KeyError(f"{t} is not a grid cell")
        return int(hits[0])


@dataclass
class Belief:
    grid: TypeGrid
    mass: np.ndarray

    def __post_init__(self) -> None:
        self.mass = np.asarray(self.mass, dtype=float)
        if self.mass.shape != (self.grid.size,):
            raise ValueError("belief mass must have one entry per grid cell")
        if np.any(self.mass < 0) or abs(self.mass.sum() - 1.0) > 1e-9:
            raise ValueError("belief mass must be a probability distribution")

    @classmethod
    def uniform(cls, grid: TypeGrid) -> "Belief":
        return cls(grid, np.full(grid.size, 1.0 / grid.size))

    @classmethod
    def point(cls, grid: TypeGrid, cell: int) -> "Belief":
        mass = np.zeros(grid.size)
        mass[cell] = 1.0
        return cls(grid, mass)


@dataclass(frozen=True)
class Observation:
    lambda_obs: float
    mu_obs: float
    t_infer: float = 0.0
    t_trans: float = 0.0


@dataclass
class SchedulerParams:
    theta_s: float = 0.5
    beta: float = 1e-3
    delta: float = 0.01
    sigma: float = 0.5
    # weights on (expected load, inference time, transfer time) in the cost
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    mu_range: tuple[float, float] = (5.0, 40.0)
    lambda_range: tuple[float, float] = (0.0, 70.0)
    resolution: tuple[int, int] = (8, 8)
    # mix this much of the uniform prior into a belief before each update;
    # 0 keeps Bayes' rule exact
    belief_mixing: float = 0.0

    def __post_init__(self) -> None:
        self.weights = tuple(float(w) for w in self.weights)
        self.mu_range = tuple(float(v) for v in self.mu_range)
        self.lambda_range = tuple(float(v) for v in self.lambda_range)
        self.resolution = tuple(int(v) for v in self.resolution)
        if not self.theta_s > 0:
            raise ValueError("theta_s must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if len(self.weights) != 3:
            raise ValueError("weights needs three entries")
        if not 0.0 <= self.belief_mixing < 1.0:
            raise ValueError("belief_mixing must lie in [0, 1)")

    def grid(self) -> TypeGrid:
        return TypeGrid.linspace(self.mu_range, self.lambda_range, self.resolution)


# --------------------------------------------------------------------------
# belief arithmetic, vectorized over rows
# --------------------------------------------------------------------------

def posterior_masses(masses: np.ndarray, grid: TypeGrid, lambda_obs, mu_obs, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """Bayes update of each row of ``masses`` with its own observation.

    Returns the posterior rows and a boolean array flagging rows whose
    likelihood degenerated (those rows keep their prior).
    """
    masses = np.atleast_2d(masses)
    lam = np.atleast_1d(np.asarray(lambda_obs, dtype=float))[:, None]
    mu = np.atleast_1d(np.asarray(mu_obs, dtype=float))[:, None]
    # Gaussian normalizers and sigma are common to every cell and cancel.
    log_like = -((lam - grid.lam) ** 2 + (mu - grid.mu) ** 2) / (2.0 * sigma * sigma)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_post = np.where(masses > 0, np.log(masses) + log_like, -np.inf)
        peak = log_post.max(axis=1, keepdims=True)
        post = np.exp(log_post - peak)
        total = post.sum(axis=1, keepdims=True)
        post = post / total
    bad = ~np.all(np.isfinite(post), axis=1) | ~np.isfinite(peak[:, 0])
    post[bad] = masses[bad]
    return post, bad


def update_belief(b: Belief, obs: Observation, sigma: float) -> Belief:
    """Posterior ``b(theta) * N(lambda_obs; lambda_theta, sigma) * N(mu_obs; mu_theta, sigma)``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    post, bad = posterior_masses(b.mass, b.grid, obs.lambda_obs, obs.mu_obs, sigma)
    if bad[0]:
        warnings.warn("likelihood underflowed on every cell; keeping prior", DegenerateLikelihood, stacklevel=2)
        return Belief(b.grid, b.mass.copy())
    return Belief(b.grid, post[0])


def cell_loads(grid: TypeGrid, delta: float) -> np.ndarray:
    """Per-cell predicted utilization ``lambda/mu + delta*(lambda - mu)``, clipped to [0, 1]."""
    return np.clip(grid.lam / grid.mu + delta * (grid.lam - grid.mu), 0.0, 1.0)


def expected_load(b: Belief, delta: float) -> float:
    if not delta > 0:
        raise ValueError("delta must be positive")
    return float(np.clip(b.mass @ cell_loads(b.grid, delta), 0.0, 1.0))


def cost_of_delegation(b: Belief, obs: Observation, delta: float,
                       weights: tuple[float, float, float] = (1.0, 1.0, 1.0)) -> float:
    w_load, w_infer, w_trans = weights
    return w_load * expected_load(b, delta) + w_infer * obs.t_infer + w_trans * obs.t_trans


def utility(s: float, c: float, beta: float) -> float:
    return s - beta * c


def argmax_lowest(values: np.ndarray) -> int:
    """Index of the maximum; the first (lowest) index wins ties."""
    return int(np.argmax(values))


# --------------------------------------------------------------------------
# routing
# --------------------------------------------------------------------------

@dataclass
class RoutingDecision:
    chosen: int
    utilities: dict[int, float]
    candidate_set: list[int]
    scores: dict[int, float] = field(default_factory=dict)


def candidate_mask(ids: np.ndarray, scores: np.ndarray, user: int, theta_s: float) -> np.ndarray:
    """Agents scoring at least ``theta_s``, plus the user's own agent when live."""
    return (scores >= theta_s) | (ids == user)


def decide(cand_ids: np.ndarray, cand_scores: np.ndarray, masses: np.ndarray, grid: TypeGrid,
           lambda_obs: np.ndarray, mu_obs: np.ndarray, t_infer: np.ndarray, t_trans: np.ndarray,
           params: SchedulerParams) -> tuple[int, np.ndarray, np.ndarray]:
    """Vectorized core of :func:`route` over candidates sorted by agent id.

    Returns (position of the chosen candidate, utilities, posterior masses).
    """
    if params.belief_mixing > 0.0:
        masses = (1.0 - params.belief_mixing) * masses + params.belief_mixing / grid.size
    post, bad = posterior_masses(masses, grid, lambda_obs, mu_obs, params.sigma)
    if np.any(bad):
        warnings.warn("likelihood underflowed on every cell; keeping prior", DegenerateLikelihood, stacklevel=2)
    load = np.clip(post @ cell_loads(grid, params.delta), 0.0, 1.0)
    w_load, w_infer, w_trans = params.weights
    cod = w_load * load + w_infer * np.asarray(t_infer) + w_trans * np.asarray(t_trans)
    utils = cand_scores - params.beta * cod
    return argmax_lowest(utils), utils, post


def route(
    user: int,
    rel: np.ndarray,
    view: RegistryView,
    beliefs: MutableMapping[int, Belief],
    obs: Mapping[int, Observation] | Callable[[int], Observation],
    params: SchedulerParams,
    grid: TypeGrid | None = None,
) -> RoutingDecision:
    """Choose the serving agent for one query at ``user``.

    ``beliefs`` is the user's own belief store and is updated in place for
    every candidate (missing entries start uniform over ``grid``). ``obs``
    supplies fresh feedback per candidate, either as a mapping or as a
    callable invoked once per candidate.
    """
    ids, caps = view.capability_matrix()
    if ids.size == 0:
        raise NoLiveAgents("registry view has no live agents")
    grid = grid or params.grid()
    scores = score_many(rel, caps)
    keep = candidate_mask(ids, scores, user, params.theta_s)
    if not keep.any():
        raise NoLiveAgents("no candidate clears the relevance threshold and the local agent is not live")
    cand = ids[keep]
    request = obs if callable(obs) else obs.__getitem__
    feedback = [request(int(j)) for j in cand]
    masses = np.stack([
        beliefs[int(j)].mass if int(j) in beliefs else np.full(grid.size, 1.0 / grid.size)
        for j in cand
    ])
    pos, utils, post = decide(
        cand, scores[keep], masses, grid,
        np.array([o.lambda_obs for o in feedback]), np.array([o.mu_obs for o in feedback]),
        np.array([o.t_infer for o in feedback]), np.array([o.t_trans for o in feedback]),
        params,
    )
    for row, j in enumerate(cand):
        beliefs[int(j)] = Belief(grid, post[row])
    cand_list = [int(j) for j in cand]
    return RoutingDecision(
        chosen=cand_list[pos],
        utilities={j: float(u) for j, u in zip(cand_list, utils)},
        candidate_set=cand_list,
        scores={j: float(s) for j, s in zip(cand_list, scores[keep])},
    )
