"""Brute-force checks of the routing game's equilibrium properties.

Small games are enumerated exhaustively: exact-potential checks,
round-robin best-response dynamics, pure Nash enumeration, price of
anarchy under affine congestion costs, and belief-convergence trials.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InstanceTooLarge, NoEquilibriumFound
from .scheduler import AgentType, Belief, Observation, TypeGrid, update_belief

ENUMERATION_LIMIT = 10**7


class Mode(str, enum.Enum):
    FIXED = "FIXED"
    AFFINE_CONGESTION = "AFFINE_CONGESTION"
    TABLE = "TABLE"


@dataclass
class GameInstance:
    """Routing game among ``n_users`` users choosing one of ``n_agents`` agents.

    FIXED:             U(i, j) = base[i, j]
    AFFINE_CONGESTION: U(i, j) = base[i, j] - (a[j] * n_j + b[j]), n_j = users on j
    TABLE:             U(i, z) = payoff[(i,) + z], an arbitrary normal-form game
    """

    mode: Mode
    n_users: int
    n_agents: int
    base: np.ndarray | None = None
    a: np.ndarray | None = None
    b: np.ndarray | None = None
    payoff: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.mode = Mode(self.mode)
        if self.n_users < 1 or self.n_agents < 1:
            raise ValueError("need at least one user and one agent")
        if self.mode is Mode.TABLE:
            self.payoff = np.asarray(self.payoff, dtype=float)
            if self.payoff.shape != (self.n_users,) + (self.n_agents,) * self.n_users:
                raise ValueError("payoff tensor has the wrong shape")
            if not np.all(np.isfinite(self.payoff)):
                raise ValueError("utilities must be finite")
            return
        self.base = (np.zeros((self.n_users, self.n_agents)) if self.base is None
                     else np.asarray(self.base, dtype=float))
        if self.base.shape != (self.n_users, self.n_agents):
            raise ValueError("base table must be (n_users, n_agents)")
        if self.mode is Mode.AFFINE_CONGESTION:
            self.a = np.asarray(self.a, dtype=float)
            self.b = np.asarray(self.b, dtype=float)
            if self.a.shape != (self.n_agents,) or self.b.shape != (self.n_agents,):
                raise ValueError("affine coefficients need one entry per agent")
        for arr in (self.base, self.a, self.b):
            if arr is not None and not np.all(np.isfinite(arr)):
                raise ValueError("utilities must be finite")

    @classmethod
    def fixed(cls, table) -> "GameInstance":
        table = np.asarray(table, dtype=float)
        return cls(Mode.FIXED, table.shape[0], table.shape[1], base=table)

    @classmethod
    def affine(cls, n_users: int, a, b, base=None) -> "GameInstance":
        a = np.asarray(a, dtype=float)
        return cls(Mode.AFFINE_CONGESTION, n_users, a.size, base=base, a=a, b=b)

    @classmethod
    def table(cls, payoff) -> "GameInstance":
        payoff = np.asarray(payoff, dtype=float)
        return cls(Mode.TABLE, payoff.shape[0], payoff.shape[1], payoff=payoff)

    # ------------------------------------------------------------------
    def loads(self, z: Sequence[int]) -> np.ndarray:
        return np.bincount(np.asarray(z, dtype=int), minlength=self.n_agents)

    def utility(self, i: int, z: Sequence[int]) -> float:
        """Utility of user ``i`` in profile ``z``."""
        j = int(z[i])
        if self.mode is Mode.TABLE:
            return float(self.payoff[(i,) + tuple(int(v) for v in z)])
        u = self.base[i, j]
        if self.mode is Mode.AFFINE_CONGESTION:
            u -= self.a[j] * self.loads(z)[j] + self.b[j]
        return float(u)

    def deviation_utilities(self, i: int, z: Sequence[int]) -> np.ndarray:
        """Utility of user ``i`` for every choice, others held fixed."""
        z = list(z)
        if self.mode is Mode.TABLE:
            idx = (i,) + tuple(z[:i]) + (slice(None),) + tuple(z[i + 1:])
            return self.payoff[idx].astype(float)
        u = self.base[i].copy()
        if self.mode is Mode.AFFINE_CONGESTION:
            others = self.loads(z)
            others[z[i]] -= 1
            u -= self.a * (others + 1) + self.b
        return u

    def social_cost(self, z: Sequence[int]) -> float:
        """Total congestion cost; equals minus the potential when ``base`` is zero."""
        if self.mode is not Mode.AFFINE_CONGESTION:
            return -potential(self, z)
        n = self.loads(z)
        return float(np.sum(n * (self.a * n + self.b)) - sum(self.base[i, zi] for i, zi in enumerate(z)))


def validate_profile(g: GameInstance, z: Sequence[int]) -> None:
    if len(z) != g.n_users or any(not 0 <= int(v) < g.n_agents for v in z):
        raise ValueError(f"invalid strategy profile {list(z)}")


def potential(g: GameInstance, z: Sequence[int]) -> float:
    """Sum of every user's utility under profile ``z``."""
    validate_profile(g, z)
    return float(sum(g.utility(i, z) for i in range(g.n_users)))


# --------------------------------------------------------------------------
# exact potential
# --------------------------------------------------------------------------

@dataclass
class PotentialReport:
    mode: str
    trials: int
    max_violation: float
    passed: bool
    witness: dict | None = None


def check_exact_potential(g: GameInstance, trials: int = 1000, rng_seed: int = 0,
                          tol: float = 1e-9,
                          phi: Callable[[GameInstance, Sequence[int]], float] = potential) -> PotentialReport:
    """Compare potential change against the deviator's utility change on random deviations."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(rng_seed)
    worst, witness = 0.0, None
    for _ in range(trials):
        z = [int(v) for v in rng.integers(0, g.n_agents, size=g.n_users)]
        i = int(rng.integers(g.n_users))
        z2 = list(z)
        z2[i] = int(rng.integers(g.n_agents))
        gap = abs((phi(g, z2) - phi(g, z)) - (g.utility(i, z2) - g.utility(i, z)))
        if gap > worst:
            worst = gap
            witness = {"profile": z, "user": i, "deviation": z2[i], "gap": gap}
    passed = worst <= tol
    return PotentialReport(g.mode.value, trials, worst, passed, None if passed else witness)


def find_potential_violation(g: GameInstance, tol: float = 1e-9) -> dict | None:
    """Exhaustive search for a unilateral deviation where the potential change differs from the utility change."""
    _check_enumerable(g)
    for z in itertools.product(range(g.n_agents), repeat=g.n_users):
        base_phi = potential(g, z)
        for i in range(g.n_users):
            for j in range(g.n_agents):
                if j == z[i]:
                    continue
                z2 = list(z)
                z2[i] = j
                gap = (potential(g, z2) - base_phi) - (g.utility(i, z2) - g.utility(i, z))
                if abs(gap) > tol:
                    return {"profile": list(z), "user": i, "deviation": j, "gap": float(gap)}
    return None


# --------------------------------------------------------------------------
# best-response dynamics and equilibria
# --------------------------------------------------------------------------

@dataclass
class DynamicsResult:
    profile: list[int]
    trace: list[float]
    converged: bool
    rounds: int


def best_response(g: GameInstance, i: int, z: Sequence[int]) -> int:
    """Lowest-index maximizer of user ``i``'s utility; keeps ``z[i]`` unless strictly beaten."""
    u = g.deviation_utilities(i, z)
    best = int(np.argmax(u))
    return best if u[best] > u[z[i]] else int(z[i])


def best_response_dynamics(g: GameInstance, z0: Sequence[int], max_iters: int = 1000) -> DynamicsResult:
    """Round-robin best responses until a full round changes nothing.

    ``trace`` starts with the initial potential and gains one entry per
    strategy change. ``max_iters`` bounds the number of rounds.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    validate_profile(g, z0)
    z = [int(v) for v in z0]
    trace = [potential(g, z)]
    for rnd in range(1, max_iters + 1):
        changed = False
        for i in range(g.n_users):
            br = best_response(g, i, z)
            if br != z[i]:
                z[i] = br
                changed = True
                trace.append(potential(g, z))
        if not changed:
            return DynamicsResult(z, trace, True, rnd)
    return DynamicsResult(z, trace, False, max_iters)


def is_nash(g: GameInstance, z: Sequence[int], tol: float = 0.0) -> bool:
    """No user has a strictly improving unilateral deviation."""
    for i in range(g.n_users):
        u = g.deviation_utilities(i, z)
        if u.max() > u[z[i]] + tol:
            return False
    return True


def _check_enumerable(g: GameInstance) -> None:
    if g.n_agents ** g.n_users > ENUMERATION_LIMIT:
        raise InstanceTooLarge(f"{g.n_agents}^{g.n_users} profiles exceed the enumeration limit")


@dataclass
class EquilibriumSet:
    nash_profiles: list[list[int]]
    max_phi_profile: list[int]
    max_phi: float
    min_social_cost_profile: list[int]
    min_social_cost: float


def brute_force_equilibria(g: GameInstance) -> EquilibriumSet:
    _check_enumerable(g)
    nash = []
    best_phi, best_phi_z = -np.inf, None
    best_cost, best_cost_z = np.inf, None
    for z in itertools.product(range(g.n_agents), repeat=g.n_users):
        phi = potential(g, z)
        cost = g.social_cost(z)
        if phi > best_phi:
            best_phi, best_phi_z = phi, list(z)
        if cost < best_cost:
            best_cost, best_cost_z = cost, list(z)
        if is_nash(g, z):
            nash.append(list(z))
    return EquilibriumSet(nash, best_phi_z, float(best_phi), best_cost_z, float(best_cost))


# --------------------------------------------------------------------------
# price of anarchy
# --------------------------------------------------------------------------

def worst_and_optimal_cost(g: GameInstance) -> tuple[float, float]:
    """Worst pure-Nash social cost and minimum social cost of ``g``."""
    eq = brute_force_equilibria(g)
    if not eq.nash_profiles:
        raise NoEquilibriumFound(f"no pure equilibrium in {g.mode.value} instance")
    return max(g.social_cost(z) for z in eq.nash_profiles), eq.min_social_cost


def poa_ratio(g: GameInstance) -> float:
    worst, opt = worst_and_optimal_cost(g)
    if opt <= 0:
        return 1.0 if worst <= opt else float("inf")
    return worst / opt


def random_affine_game(rng: np.random.Generator, max_users: int = 4, n_agents: int = 3,
                       constant_costs: bool = False) -> GameInstance:
    n_users = int(rng.integers(1, max_users + 1))
    a = np.zeros(n_agents) if constant_costs else rng.uniform(0.0, 1.0, n_agents)
    b = rng.uniform(0.0, 1.0, n_agents)
    return GameInstance.affine(n_users, a, b)


@dataclass
class BPoAReport:
    draws: int
    mean_ratio: float
    max_ratio: float
    ratio_of_expectations: float
    ratios: list[float] = field(repr=False, default_factory=list)


def bpoa(draws: int = 500, rng_seed: int = 0, max_users: int = 4, n_agents: int = 3,
         sampler: Callable[[np.random.Generator], GameInstance] | None = None) -> BPoAReport:
    """Price-of-anarchy estimate over random affine type realizations.

    Each draw is one realization of the agents' cost coefficients, solved
    exhaustively. Reports the mean and max per-draw ratio and the ratio of
    expected worst-equilibrium cost to expected optimal cost.
    """
    if draws < 1:
        raise ValueError("draws must be >= 1")
    rng = np.random.default_rng(rng_seed)
    sampler = sampler or (lambda r: random_affine_game(r, max_users, n_agents))
    ratios, worst_costs, opt_costs = [], [], []
    for _ in range(draws):
        g = sampler(rng)
        if g.mode is not Mode.AFFINE_CONGESTION:
            raise ValueError("price of anarchy needs affine congestion games")
        worst, opt = worst_and_optimal_cost(g)
        ratios.append(poa_ratio(g))
        worst_costs.append(worst)
        opt_costs.append(opt)
    return BPoAReport(
        draws=draws,
        mean_ratio=float(np.mean(ratios)),
        max_ratio=float(np.max(ratios)),
        ratio_of_expectations=float(np.sum(worst_costs) / np.sum(opt_costs)),
        ratios=[float(r) for r in ratios],
    )


# --------------------------------------------------------------------------
# belief convergence
# --------------------------------------------------------------------------

def belief_convergence_trial(true_type: AgentType, grid: TypeGrid, sigma: float,
                             n_obs: int, rng_seed: int = 0) -> np.ndarray:
    """Posterior mass on the true cell after each of ``n_obs`` noisy observations."""
    cell = grid.cell_of(true_type)
    rng = np.random.default_rng(rng_seed)
    belief = Belief.uniform(grid)
    trace = np.empty(n_obs)
    noise = rng.normal(0.0, sigma, size=(n_obs, 2))
    for t in range(n_obs):
        obs = Observation(lambda_obs=true_type.lam + noise[t, 0], mu_obs=true_type.mu + noise[t, 1])
        belief = update_belief(belief, obs, sigma)
        trace[t] = belief.mass[cell]
    return trace


def window_monotone_fraction(trace: np.ndarray, window: int = 50, tol: float = 1e-12) -> float:
    """Fraction of consecutive window means that do not decrease."""
    n = len(trace) // window
    if n < 2:
        return 1.0
    means = np.asarray(trace[: n * window]).reshape(n, window).mean(axis=1)
    return float(np.mean(np.diff(means) >= -tol))
