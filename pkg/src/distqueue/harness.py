"""Experiment harness: workload generation, churn driving and statistics.

Reproduces the paper-style measurement: at the beginning of every round a
fixed number of requests (or one per node with some probability) is injected
at uniformly random processes, recorded at their middle nodes; after the
generation window the run continues to quiescence and per-request round
counts are aggregated.  Every checked run must pass the consistency checker
before its statistics are reported.
"""

from __future__ import annotations

import random
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from distqueue import checker
from distqueue.kernel import SchedulerMode, SchedulerPolicy
from distqueue.sim import SimConfig, Simulation

CSV_HEADER = ("n,p,mode,scheduler,seed,mean_rounds,p50,p95,"
              "max_batch_len,max_update_phase_rounds")


@dataclass
class ExperimentConfig:
    nodes: int = 50
    rounds: int = 1000
    rate: int = 10                  # requests per round, split over processes
    gen_prob: float | None = None   # per-process per-round probability instead
    enqueue_prob: float = 0.5
    mode: str = "queue"             # queue | stack
    scheduler: str = "sync"         # sync | async-random | async-adversarial
    max_delay: int = 1
    script: tuple[int, ...] = ()
    seed: int = 0
    churn: list[tuple[int, str, int]] = field(default_factory=list)
    update_alpha: float = 0.0
    check: bool = True
    quiesce_limit: int = 200000
    stack_barrier: bool = True
    local_combine: bool = True
    log_messages: bool = False


@dataclass
class RunStats:
    config: ExperimentConfig
    issued: int
    completed: int
    mean_rounds: float
    p50: float
    p95: float
    max_batch_len: int
    max_update_phase_rounds: int
    tombstone_hits: int
    final_step: int
    checker_ok: bool

    def csv_row(self) -> str:
        p = (self.config.gen_prob if self.config.gen_prob is not None
             else self.config.enqueue_prob)
        return (f"{self.config.nodes},{p},{self.config.mode},"
                f"{self.config.scheduler},{self.config.seed},"
                f"{self.mean_rounds:.4f},{self.p50:.1f},{self.p95:.1f},"
                f"{self.max_batch_len},{self.max_update_phase_rounds}")


def build_sim(cfg: ExperimentConfig) -> Simulation:
    policy = SchedulerPolicy(SchedulerMode(cfg.scheduler), seed=cfg.seed * 3 + 1,
                             max_delay=cfg.max_delay, script=cfg.script)
    sim_cfg = SimConfig(n_processes=cfg.nodes,
                        stack_mode=(cfg.mode == "stack"),
                        scheduler=policy,
                        update_alpha=cfg.update_alpha,
                        stack_barrier=cfg.stack_barrier,
                        local_combine=cfg.local_combine,
                        log_messages=cfg.log_messages)
    return Simulation(sim_cfg)


def run_experiment(cfg: ExperimentConfig, keep_sim: bool = False):
    """Run one configuration to quiescence; returns RunStats (and the sim)."""
    sim = build_sim(cfg)
    rng = random.Random(cfg.seed * 3 + 2)
    churn_by_round: dict[int, list[tuple[str, int]]] = {}
    for rnd, action, pid in cfg.churn:
        churn_by_round.setdefault(rnd, []).append((action, pid))

    for rnd in range(cfg.rounds):
        for action, pid in churn_by_round.get(rnd, ()):
            if action == "join":
                entry = _pick_process(sim, rng, issuing=False)
                sim.start_join(pid, entry)
            else:
                sim.start_leave(pid)
        _inject(sim, cfg, rng)
        entry = _pick_process(sim, rng, issuing=False)
        sim.retry_stuck_joins(entry)
        sim.step()
    last = sim.run_until_quiescent(cfg.quiesce_limit)

    rec = sim.recorder
    checker_ok = True
    if cfg.check:
        verdict = checker.check_run(rec, stack=(cfg.mode == "stack"))
        checker_ok = verdict.ok
        if not verdict.ok:
            raise AssertionError(f"consistency violation: {verdict.reason}")
    lat = rec.latencies()
    issued = sum(1 for r in rec.requests.values()
                 if r.kind not in ("Join", "Leave"))
    completed = sum(1 for r in rec.requests.values()
                    if r.completed and r.kind not in ("Join", "Leave"))
    stats = RunStats(
        config=cfg,
        issued=issued,
        completed=completed,
        mean_rounds=statistics.fmean(lat) if lat else 0.0,
        p50=_pct(lat, 50),
        p95=_pct(lat, 95),
        max_batch_len=rec.max_batch_length(),
        max_update_phase_rounds=rec.max_update_phase_rounds(),
        tombstone_hits=sim.kernel.tombstone_hits,
        final_step=last,
        checker_ok=checker_ok,
    )
    return (stats, sim) if keep_sim else stats


def _pct(values, q) -> float:
    if not values:
        return 0.0
    v = sorted(values)
    idx = min(len(v) - 1, max(0, round(q / 100 * (len(v) - 1))))
    return float(v[idx])


def _issuing_pids(sim: Simulation) -> list[int]:
    return sorted(p.pid for p in sim.processes.values()
                  if p.state in ("live", "joining"))


def _pick_process(sim: Simulation, rng: random.Random, issuing: bool) -> int:
    if issuing:
        pids = _issuing_pids(sim)
    else:
        pids = sorted(p.pid for p in sim.processes.values()
                      if p.state == "live")
    return pids[rng.randrange(len(pids))]


def _inject(sim: Simulation, cfg: ExperimentConfig, rng: random.Random) -> None:
    if cfg.gen_prob is not None:
        for pid in _issuing_pids(sim):
            if rng.random() < cfg.gen_prob:
                sim.issue(pid, rng.random() < cfg.enqueue_prob)
    else:
        for _ in range(cfg.rate):
            pid = _pick_process(sim, rng, issuing=True)
            sim.issue(pid, rng.random() < cfg.enqueue_prob)


def sweep(configs: list[ExperimentConfig], jobs: int = 1) -> list[RunStats]:
    """Run configurations (optionally in parallel); order follows the input."""
    if jobs <= 1:
        return [run_experiment(c) for c in configs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run_experiment, configs))


def sweep_csv(stats: list[RunStats]) -> str:
    return "\n".join([CSV_HEADER] + [s.csv_row() for s in stats]) + "\n"
