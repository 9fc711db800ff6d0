"""Command-line entry point.

Subcommands::

    ppai train-gate   [--data FILE] [--config GATE.json] --out-dir DIR
    ppai simulate     --config SIM.json [--seeds 0,1,...] --out-dir DIR
    ppai sweep        --spec SWEEP.json [--workers N] --out-dir DIR
    ppai analyze-game [--bpoa-draws N] [--inject-fault] --out-dir DIR

Set ``PPAI_LOG`` (DEBUG, INFO, WARNING, ...) to control log verbosity.
Every output file is a deterministic function of the inputs and seeds.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import spearmanr

from . import _jsonio
from .errors import ConfigInvalid, PPAIError, SpecInvalid
from .game_analysis import (
    GameInstance,
    best_response_dynamics,
    belief_convergence_trial,
    bpoa,
    check_exact_potential,
    find_potential_violation,
    is_nash,
    potential,
    window_monotone_fraction,
)
from .qagate import (
    FeatureHashEncoder,
    argmax_accuracy,
    kl_loss_and_grad,
    read_training_file,
    save_gate,
    train_gate,
)
from .scheduler import AgentType, TypeGrid
from .simnet import GateConfig, MetricsSummary, SimConfig, random_churn_schedule, run
from .workload import split, synthetic_corpus

log = logging.getLogger("ppai")

SWEEP_SCHEMA = "ppai-sweep/1"
TRENDS_SCHEMA = "ppai-trends/1"
GAME_SCHEMA = "ppai-game-report/1"
SWEEP_PARAMETERS = ("arrival_lambda", "beta", "n_agents", "churn_rate")
METRICS = ("avg_accuracy", "avg_process_time", "assignment_entropy")


def _setup_logging() -> None:
    level = os.environ.get("PPAI_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def parse_seeds(text: str | None) -> list[int] | None:
    """``"0,1,2"`` or a range ``"0-7"``."""
    if text is None:
        return None
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise argparse.ArgumentTypeError("no seeds given")
    return seeds


# --------------------------------------------------------------------------
# train-gate
# --------------------------------------------------------------------------

def _gate_config(path: str | None) -> GateConfig:
    if path is None:
        return GateConfig()
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    allowed = {f.name for f in fields(GateConfig)}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigInvalid(f"unknown gate config keys: {', '.join(unknown)}")
    return GateConfig(**raw)


def cmd_train_gate(args: argparse.Namespace) -> int:
    cfg = _gate_config(args.config)
    encoder = FeatureHashEncoder(cfg.d, cfg.seed)
    if args.data:
        examples = read_training_file(args.data)
        if not examples:
            raise ConfigInvalid(f"{args.data}: no training examples")
        k = len(examples[0][1])
    else:
        examples = synthetic_corpus(cfg.k, cfg.n_per_cluster, cfg.seed, encoder)
        k = cfg.k
    train, test = split(examples, args.held_out, cfg.seed)
    gate, losses = train_gate(
        train, k, cfg.d_p, encoder=encoder, learning_rate=cfg.learning_rate, epochs=cfg.epochs,
        batch_size=cfg.batch_size, seed=cfg.seed, hidden=cfg.hidden,
        logit_scale=cfg.logit_scale, alpha=cfg.alpha, top_p=cfg.top_p,
    )
    acc = argmax_accuracy(gate, test)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / args.name
    save_gate(gate, ckpt)
    test_loss = kl_loss_and_grad(
        {"w1": gate.projector.w1, "b1": gate.projector.b1, "w2": gate.projector.w2,
         "b2": gate.projector.b2, "prototypes": gate.prototypes},
        np.stack([gate.encoder(t) for t, _ in test]), np.stack([y for _, y in test]),
        gate.logit_scale, with_grad=False,
    )[0]
    report = {"schema": "ppai-train/1", "K": k, "train_examples": len(train),
              "held_out_examples": len(test), "final_loss": losses[-1] if losses else None,
              "held_out_loss": test_loss, "held_out_accuracy": acc, "checkpoint": ckpt.name}
    _jsonio.write_json(out / "train_report.json", report)
    print(f"final_loss={report['final_loss']:.6f} held_out_accuracy={acc:.4f} checkpoint={ckpt}")
    return 0


# --------------------------------------------------------------------------
# simulate
# --------------------------------------------------------------------------

def mean_summary(summaries: Sequence[MetricsSummary]) -> dict:
    """Per-metric means across runs."""
    out = {"schema": "ppai-mean-summary/1", "runs": len(summaries)}
    for name in METRICS + ("issued", "completed", "in_flight"):
        out[name] = float(np.mean([getattr(s, name) for s in summaries]))
    out["per_agent_counts"] = np.mean([s.per_agent_counts for s in summaries], axis=0).tolist()
    return out


def cmd_simulate(args: argparse.Namespace) -> int:
    base = SimConfig.from_json(args.config)
    out = Path(args.out_dir)
    seeds = args.seeds
    if seeds is None:
        result = run(base)
        result.write(out, "run")
        _print_summary("run", result.summary)
        return 0
    summaries = []
    for s in seeds:
        result = run(replace(base, seed=s))
        result.write(out, f"seed{s}")
        summaries.append(result.summary)
        _print_summary(f"seed{s}", result.summary)
    if len(seeds) == 8:
        mean = mean_summary(summaries)
        _jsonio.write_json(out / "mean.summary.json", mean)
        print(f"mean accuracy={mean['avg_accuracy']:.4f} process_time={mean['avg_process_time']:.5f}")
    return 0


def _print_summary(tag: str, s: MetricsSummary) -> None:
    print(f"{tag} accuracy={s.avg_accuracy:.4f} process_time={s.avg_process_time:.5f} "
          f"entropy={s.assignment_entropy:.4f} completed={s.completed}/{s.issued}")


# --------------------------------------------------------------------------
# sweep
# --------------------------------------------------------------------------

@dataclass
class SweepSpec:
    parameter: str
    values: list
    base_config: SimConfig
    seeds: list[int]

    @classmethod
    def from_dict(cls, raw: dict) -> "SweepSpec":
        if not isinstance(raw, dict):
            raise SpecInvalid("sweep spec must be a JSON object")
        unknown = sorted(set(raw) - {"parameter", "values", "base_config", "seeds"})
        if unknown:
            raise SpecInvalid(f"unknown sweep spec keys: {', '.join(unknown)}")
        param = raw.get("parameter")
        if param not in SWEEP_PARAMETERS:
            raise SpecInvalid(f"parameter must be one of {', '.join(SWEEP_PARAMETERS)}")
        values, seeds = raw.get("values"), raw.get("seeds", [0])
        if not isinstance(values, list) or not values:
            raise SpecInvalid("values must be a nonempty list")
        if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
            raise SpecInvalid("seeds must be a nonempty list of integers")
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
            raise SpecInvalid("sweep values must be numbers")
        try:
            base = SimConfig.from_dict(raw.get("base_config", {}))
            spec = cls(param, sorted(values), base, sorted(seeds))
            for v in spec.values:
                spec.config_for(v, spec.seeds[0])
        except ConfigInvalid as exc:
            raise SpecInvalid(str(exc)) from exc
        return spec

    @classmethod
    def from_json(cls, path: str | Path) -> "SweepSpec":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SpecInvalid(f"{path}: {exc}") from exc
        return cls.from_dict(raw)

    def config_for(self, value, seed: int) -> SimConfig:
        cfg = replace(self.base_config, seed=seed)
        if self.parameter == "arrival_lambda":
            return replace(cfg, arrival_rate_lambda=float(value))
        if self.parameter == "beta":
            return replace(cfg, scheduler=replace(cfg.scheduler, beta=float(value)))
        if self.parameter == "n_agents":
            if int(value) != value:
                raise ConfigInvalid("n_agents values must be integers")
            return replace(cfg, n_agents=int(value))
        churn = random_churn_schedule(float(value), cfg.duration, cfg.n_agents, seed)
        return replace(cfg, churn_schedule=tuple(cfg.churn_schedule) + tuple(churn))


@dataclass
class SweepResult:
    parameter: str
    rows: list[dict] = field(default_factory=list)

    def means(self) -> dict[str, list[float]]:
        values = sorted({r["value"] for r in self.rows})
        out = {"values": values}
        for m in METRICS:
            out[m] = [float(np.mean([r[m] for r in self.rows if r["value"] == v])) for v in values]
        return out


def _run_point(cfg: SimConfig) -> MetricsSummary:
    return run(cfg).summary


def run_sweep(spec: SweepSpec, workers: int = 1) -> SweepResult:
    points = [(v, s) for v in spec.values for s in spec.seeds]
    configs = [spec.config_for(v, s) for v, s in points]
    if workers > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            summaries = list(pool.map(_run_point, configs))
    else:
        summaries = [_run_point(c) for c in configs]
    rows = []
    for (v, s), summ in zip(points, summaries):
        rows.append({"value": v, "seed": s, **{m: getattr(summ, m) for m in METRICS},
                     "issued": summ.issued, "completed": summ.completed,
                     "per_agent_counts": summ.per_agent_counts, "summary": summ})
    rows.sort(key=lambda r: (r["value"], r["seed"]))
    return SweepResult(spec.parameter, rows)


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Rank correlation; 0 when either side is constant or has fewer than two points."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.size < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0
    return float(spearmanr(x, y).statistic)


def trend_report(result: SweepResult) -> dict:
    """Sweep means, their rank correlation with the swept value, and the expected directions."""
    means = result.means()
    rho = {m: spearman(means["values"], means[m]) for m in METRICS}
    time_means = np.asarray(means["avg_process_time"])
    acc = np.asarray(means["avg_accuracy"])
    checks: dict[str, bool] = {}
    if result.parameter == "beta":
        checks["process_time_non_increasing"] = rho["avg_process_time"] <= 0.0
        checks["entropy_non_decreasing"] = rho["assignment_entropy"] >= 0.0
        checks["accuracy_non_increasing"] = rho["avg_accuracy"] <= 0.0
    elif result.parameter == "n_agents":
        checks["process_time_decreasing"] = rho["avg_process_time"] <= 0.0
        checks["process_time_strictly_decreasing"] = bool(np.all(np.diff(time_means) < 0))
        checks["accuracy_stable_2pp"] = bool(np.ptp(acc) <= 0.02)
    elif result.parameter == "arrival_lambda":
        checks["process_time_non_decreasing"] = rho["avg_process_time"] >= 0.0
    return {"schema": TRENDS_SCHEMA, "parameter": result.parameter, "means": means,
            "spearman": rho, "assertions": checks, "all_hold": all(checks.values())}


def write_sweep_csv(path: Path, result: SweepResult) -> None:
    buf = io.StringIO()
    buf.write(f"# schema: {SWEEP_SCHEMA}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["parameter", "value", "seed", *METRICS, "issued", "completed", "per_agent_counts"])
    for r in result.rows:
        w.writerow([result.parameter, repr(r["value"]), r["seed"],
                    *(repr(float(r[m])) for m in METRICS), r["issued"], r["completed"],
                    " ".join(str(c) for c in r["per_agent_counts"])])
    path.write_text(buf.getvalue(), encoding="utf-8")


def cmd_sweep(args: argparse.Namespace) -> int:
    spec = SweepSpec.from_json(args.spec)
    if args.seeds is not None:
        spec.seeds = sorted(args.seeds)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    result = run_sweep(spec, args.workers)
    log.info("sweep of %d runs took %.1f s", len(result.rows), time.perf_counter() - t0)
    write_sweep_csv(out / "sweep.csv", result)
    runs = out / "runs"
    runs.mkdir(exist_ok=True)
    index = {v: i for i, v in enumerate(spec.values)}
    for r in result.rows:
        _jsonio.write_json(runs / f"v{index[r['value']]}_seed{r['seed']}.summary.json", r["summary"].to_dict())
    trends = trend_report(result)
    _jsonio.write_json(out / "trends.json", trends)
    for v, *ms in zip(trends["means"]["values"], *(trends["means"][m] for m in METRICS)):
        print(f"{spec.parameter}={v} " + " ".join(f"{m}={x:.5g}" for m, x in zip(METRICS, ms)))
    for name, ok in trends["assertions"].items():
        print(f"trend {name}: {'holds' if ok else 'FAILS'}")
    return 1 if args.strict and not trends["all_hold"] else 0


# --------------------------------------------------------------------------
# analyze-game
# --------------------------------------------------------------------------

def _faulty_potential(g: GameInstance, z: Sequence[int]) -> float:
    # negative control: a potential that double counts the first user
    return potential(g, z) + g.utility(0, z)


def analyze_game(bpoa_draws: int = 500, trials: int = 10_000, seed: int = 0,
                 inject_fault: bool = False) -> dict:
    """Run every game-theoretic property check and collect a report."""
    rng = np.random.default_rng(seed)
    checks: dict[str, bool] = {}

    fixed = GameInstance.fixed(rng.uniform(-1.0, 1.0, (5, 5)))
    phi = _faulty_potential if inject_fault else potential
    pot = check_exact_potential(fixed, trials=trials, rng_seed=seed, phi=phi)
    checks["exact_potential_fixed"] = pot.passed

    converged, monotone, nash_ok, rounds_ok = 0, True, True, True
    n_games = 100
    for s in range(n_games):
        r = np.random.default_rng([seed, s])
        g = GameInstance.fixed(r.uniform(-1.0, 1.0, (5, 5)))
        dyn = best_response_dynamics(g, [int(v) for v in r.integers(0, 5, 5)])
        converged += dyn.converged
        monotone &= bool(np.all(np.diff(dyn.trace) > 0))
        nash_ok &= is_nash(g, dyn.profile)
        rounds_ok &= dyn.rounds <= max(2, g.n_users)
    rate = converged / n_games
    checks["dynamics_converge"] = rate == 1.0
    checks["dynamics_strictly_monotone"] = monotone
    checks["dynamics_terminal_nash"] = nash_ok
    checks["dynamics_round_bound"] = rounds_ok

    bp = bpoa(draws=bpoa_draws, rng_seed=seed)
    checks["bpoa_bound"] = bp.max_ratio <= 5.0 / 3.0 + 1e-9

    grid = TypeGrid(10.0 + 2.0 * np.arange(8), 2.0 * np.arange(8))
    hits, window_ok = 0, True
    n_belief = 50
    for s in range(n_belief):
        cell = int(np.random.default_rng([seed, 1000 + s]).integers(grid.size))
        trace = belief_convergence_trial(AgentType(grid.mu[cell], grid.lam[cell]), grid, 0.5, 500, s)
        hits += trace[-1] >= 0.95
        window_ok &= window_monotone_fraction(trace, 50) >= 0.9
    checks["belief_convergence"] = hits >= 48
    checks["belief_window_monotone"] = window_ok

    # congestion-coupled utilities: the plain sum is not an exact potential
    affine = GameInstance.affine(3, [1.0, 0.5], [0.0, 0.2])
    witness = find_potential_violation(affine)

    return {
        "schema": GAME_SCHEMA,
        "mode": pot.mode,
        "trials": pot.trials,
        "max_violation": pot.max_violation,
        "potential_witness": pot.witness,
        "convergence_rate": rate,
        "bpoa_draws": bp.draws,
        "bpoa_max": bp.max_ratio,
        "bpoa_mean": bp.mean_ratio,
        "belief_hits": hits,
        "belief_trials": n_belief,
        "affine_sum_potential_witness": witness,
        "fault_injected": inject_fault,
        "checks": checks,
        "passed": all(checks.values()),
    }


def cmd_analyze_game(args: argparse.Namespace) -> int:
    report = analyze_game(args.bpoa_draws, args.trials, args.seed, args.inject_fault)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _jsonio.write_json(out / "game_report.json", report)
    for name, ok in report["checks"].items():
        print(f"{name}: {'PASS' if ok else 'FAIL'}")
    print(f"max_violation={report['max_violation']:.3g} convergence_rate={report['convergence_rate']:.3f} "
          f"bpoa_max={report['bpoa_max']:.6f}")
    return 0 if report["passed"] else 1


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ppai", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train-gate", help="train a query gate and write a checkpoint")
    t.add_argument("--data", help="ndjson file of {text, label} records (default: synthetic corpus)")
    t.add_argument("--config", help="JSON object of gate hyperparameters")
    t.add_argument("--out-dir", required=True)
    t.add_argument("--name", default="gate.json", help="checkpoint file name")
    t.add_argument("--held-out", type=float, default=0.2)
    t.set_defaults(func=cmd_train_gate)

    s = sub.add_parser("simulate", help="run the network simulator")
    s.add_argument("--config", required=True)
    s.add_argument("--seeds", type=parse_seeds, help="e.g. 0-7 or 0,3,5; overrides the config seed")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep", help="run a parameter sweep")
    w.add_argument("--spec", required=True)
    w.add_argument("--seeds", type=parse_seeds, help="override the spec's seeds")
    w.add_argument("--out-dir", required=True)
    w.add_argument("--workers", type=int, default=1)
    w.add_argument("--strict", action="store_true", help="exit nonzero if a trend assertion fails")
    w.set_defaults(func=cmd_sweep)

    g = sub.add_parser("analyze-game", help="check the routing game's equilibrium properties")
    g.add_argument("--bpoa-draws", type=int, default=500)
    g.add_argument("--trials", type=int, default=10_000, help="random deviations for the potential check")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--inject-fault", action="store_true", help="use a corrupted potential (negative control)")
    g.add_argument("--out-dir", required=True)
    g.set_defaults(func=cmd_analyze_game)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (PPAIError, FileNotFoundError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
