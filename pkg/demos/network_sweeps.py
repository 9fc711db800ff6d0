"""Event-driven network runs: an M/M/1 check, routing against single agents,
and a beta sweep. Takes about a minute."""
from dataclasses import replace

from ppai import harness
from ppai.simnet import SimConfig, run

mm1 = SimConfig(n_agents=1, arrival_rate_lambda=5.0, service_rate_mu=10.0, link_delay=0.0,
                query_size=0.0, duration=1e9, max_queries=20_000, seed=0)
print(f"M/M/1 mean sojourn {run(mm1).summary.avg_process_time:.4f} s (theory 0.2)")

base = SimConfig(duration=30.0, arrival_rate_lambda=18.0, seed=0)
s = run(base).summary
print(f"routed: accuracy {s.avg_accuracy:.3f}, time {s.avg_process_time:.3f} s, counts {s.per_agent_counts}")
for j in range(base.n_agents):
    s = run(replace(base, forced_agent=j)).summary
    print(f"agent {j} alone: accuracy {s.avg_accuracy:.3f}, time {s.avg_process_time:.3f} s")

spec = harness.SweepSpec.from_dict({
    "parameter": "beta", "values": [1e-5, 1e-3, 1e-2], "seeds": [0, 1, 2],
    "base_config": {"duration": 30.0, "arrival_rate_lambda": 50.0, "service_rate_mu": 12.0, "query_bank": 128},
})
rep = harness.trend_report(harness.run_sweep(spec))
for v, t, h, a in zip(*(rep["means"][k] for k in ("values", "avg_process_time", "assignment_entropy", "avg_accuracy"))):
    print(f"beta {v:g}: time {t:.4f} s, entropy {h:.3f} bits, accuracy {a:.4f}")
print("trends", rep["assertions"])
