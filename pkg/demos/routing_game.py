"""Routing as a game: potential, best-response dynamics and the price of anarchy."""
import numpy as np

from ppai.game_analysis import (
    GameInstance,
    best_response_dynamics,
    bpoa,
    brute_force_equilibria,
    check_exact_potential,
    find_potential_violation,
)

rng = np.random.default_rng(0)

# fixed utilities: the sum of utilities is an exact potential
g = GameInstance.fixed(rng.uniform(-1, 1, (5, 5)))
rep = check_exact_potential(g, trials=10_000)
print(f"fixed game: max |dPhi - dU| = {rep.max_violation:.1e}")
res = best_response_dynamics(g, [0] * 5)
print(f"dynamics: {res.rounds} rounds, potential trace {np.round(res.trace, 3)}")
print("terminal profile", res.profile, "among Nash set", brute_force_equilibria(g).nash_profiles)

# affine congestion: the utility sum stops being exact, Rosenthal's potential does not
ga = GameInstance.affine(3, [1.0, 0.5], [0.0, 0.2])
print("affine game, utility-sum witness:", find_potential_violation(ga))

out = bpoa(draws=500, rng_seed=0)
print(f"price of anarchy over {out.draws} draws: mean {out.mean_ratio:.4f}, max {out.max_ratio:.4f} (bound 5/3)")
