"""Learn an agent's hidden service and arrival rates from noisy feedback,
then route one query by relevance minus beta-weighted delegation cost."""
import numpy as np

from ppai.registry import CapabilityRecord, Flag, RegistryView
from ppai.scheduler import AgentType, Belief, Observation, SchedulerParams, expected_load, route, update_belief

params = SchedulerParams(sigma=4.0)
grid = params.grid()
true_mu, true_lam = 25.0, 10.0
cell = grid.cell_of(AgentType(true_mu, true_lam))
rng = np.random.default_rng(0)

b = Belief.uniform(grid)
for n in range(1, 201):
    obs = Observation(true_lam + rng.normal(0, 4.0), true_mu + rng.normal(0, 4.0))
    b = update_belief(b, obs, params.sigma)
    if n in (1, 5, 20, 200):
        top = int(np.argmax(b.mass))
        print(f"after {n:3d} obs: mass on true cell {b.mass[cell]:.3f}, "
              f"map guess mu={grid.mu[top]:.1f} lambda={grid.lam[top]:.1f}")
print(f"expected load {expected_load(b, params.delta):.3f}")

# two equally relevant agents; the busy one loses
view = RegistryView()
view.apply(CapabilityRecord(1, 1, Flag.JOIN, (0.9, 0.1)))
view.apply(CapabilityRecord(2, 1, Flag.JOIN, (0.9, 0.1)))
feedback = {1: Observation(35.0, 40.0, 0.05, 0.01), 2: Observation(5.0, 40.0, 0.05, 0.01)}
dec = route(0, np.array([1.0, 0.0]), view, {}, feedback, SchedulerParams(beta=0.5))
print("chosen agent", dec.chosen, {j: round(u, 4) for j, u in dec.utilities.items()})
